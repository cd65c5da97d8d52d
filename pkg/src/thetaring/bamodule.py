"""The vector Baker-Akhiezer family and its module of pole functions.

For fixed generic translates c and c', the two generating functions are

    psi(z, x)    = theta(z + c + x) / theta(z) * E(z, x)
    psi_c'(z, x) = theta(z + c + c' + x) theta(z - c') / theta(z)^2 * E(z, x)

with E(z, x) = exp(-x1 d/dz1 log theta(z) - x2 d/dz2 log theta(z)).  The
space of such functions with pole order at most k along the theta divisor
is spanned, at fixed x, by the k^2 functions

    theta[a/k, 0](k z + c + x, k Omega) / theta(z)^k * E(z, x),
    a in (Z/kZ)^2,

and the same space is generated freely by x-derivatives of psi (order
<= k-1) and psi_c' (order <= k-2).  Both statements are checked here by
numerical rank of sample matrices.  With z held fixed every function above
is a coefficient expression in x, which is how the rest of the package
consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import math

import numpy as np

from .avgeom import _wrap_dist, reduce_mod_lattice
from .errors import DivisorHit, OnDivisor
from .opcalc import (CoeffExpr, Evaluator, add, const, differentiate, div,
                     exp_lin, mul, theta_node, var, x_derivative)
from .theta import Characteristic, RiemannMatrix, ThetaBackend, ZERO_CHAR

#: Minimal lattice distance of a usable translate from zero.
TRANSLATE_FLOOR = 1e-8

#: Relative clearance below which a denominator theta is considered hit.
DENOM_CLEARANCE = 1e-10

#: Relative clearance demanded of sampled evaluation points.
SAMPLE_CLEARANCE = 0.05

#: Numerical-rank cut relative to the top singular value.
RANK_CUT = 1e-8

#: Radius of the x-polydisc used for sampling.
X_RADIUS = 0.1


class BAParams:
    """Validated translate data (Omega, c, c') with a shared backend."""

    def __init__(self, omega: RiemannMatrix, c, c_prime,
                 backend: Optional[ThetaBackend] = None):
        self.omega = omega
        self.backend = backend or ThetaBackend(omega)
        self.c = np.asarray(c, dtype=complex)
        self.c_prime = np.asarray(c_prime, dtype=complex)
        be = self.backend
        floor = DENOM_CLEARANCE * be.magnitude_scale()
        for name, w in (("c", self.c), ("c_prime", self.c_prime)):
            coords = np.array(reduce_mod_lattice(w, omega).coords)
            if _wrap_dist(coords, np.zeros(4)) < TRANSLATE_FLOOR:
                raise DivisorHit(f"translate {name} is a lattice point")
        for name, w in (("c_prime", self.c_prime),
                        ("c + c_prime", self.c + self.c_prime)):
            if be.clearance(w) < floor:
                raise DivisorHit(f"theta({name}) below divisor floor")

    def exp_factor(self, z) -> Tuple[CoeffExpr, dict]:
        """E(z, .) as an expression, along with log-derivatives at z."""
        ld = self.backend.log_derivs(z, 2)
        return exp_lin((-ld[(1, 0)], -ld[(0, 1)])), ld


def psi_expr(p: BAParams, z) -> CoeffExpr:
    """psi(z, .) as a coefficient expression in x."""
    e, _ = p.exp_factor(z)
    t0 = p.backend.value(z)
    return mul(div(theta_node(ZERO_CHAR, 1, np.asarray(z) + p.c), const(t0)),
               e)


def psi_cprime_expr(p: BAParams, z) -> CoeffExpr:
    e, _ = p.exp_factor(z)
    be = p.backend
    t0 = be.value(z)
    tcp = be.value(np.asarray(z) - p.c_prime)
    return mul(theta_node(ZERO_CHAR, 1, np.asarray(z) + p.c + p.c_prime),
               const(tcp / t0 ** 2), e)


def psi_pair(p: BAParams, z) -> Tuple[CoeffExpr, CoeffExpr]:
    return psi_expr(p, z), psi_cprime_expr(p, z)


def dz_psi_expr(p: BAParams, z, j: int) -> CoeffExpr:
    """d/dz_j of psi at fixed z, as an expression in x.

    The z-derivative hits the theta quotient and the exponential factor;
    the latter contributes -(x1 l_{1j} + x2 l_{2j}) psi with l the second
    log-derivatives of theta at z.
    """
    e, ld = p.exp_factor(z)
    be = p.backend
    z = np.asarray(z)
    t0 = be.value(z)
    ej = (1, 0) if j == 0 else (0, 1)
    lj = ld[ej]
    lam = [ld[(2, 0)] if j == 0 else ld[(1, 1)],
           ld[(1, 1)] if j == 0 else ld[(0, 2)]]
    quot = add(
        div(theta_node(ZERO_CHAR, 1, z + p.c, deriv=ej), const(t0)),
        mul(const(-lj / t0), theta_node(ZERO_CHAR, 1, z + p.c)),
        mul(div(theta_node(ZERO_CHAR, 1, z + p.c), const(t0)),
            add(mul(const(-lam[0]), var(0)), mul(const(-lam[1]), var(1)))),
    )
    return mul(quot, e)


def dz_psi_cprime_expr(p: BAParams, z, j: int) -> CoeffExpr:
    e, ld = p.exp_factor(z)
    be = p.backend
    z = np.asarray(z)
    t0 = be.value(z)
    ej = (1, 0) if j == 0 else (0, 1)
    lj = ld[ej]
    lam = [ld[(2, 0)] if j == 0 else ld[(1, 1)],
           ld[(1, 1)] if j == 0 else ld[(0, 2)]]
    tcp = be.derivs(z - p.c_prime, 1)
    base = const(tcp[(0, 0)] / t0 ** 2)
    quot = add(
        mul(theta_node(ZERO_CHAR, 1, z + p.c + p.c_prime, deriv=ej), base),
        mul(const(tcp[ej] / t0 ** 2),
            theta_node(ZERO_CHAR, 1, z + p.c + p.c_prime)),
        mul(const(-2 * lj * tcp[(0, 0)] / t0 ** 2),
            theta_node(ZERO_CHAR, 1, z + p.c + p.c_prime)),
    )
    envelope = mul(
        theta_node(ZERO_CHAR, 1, z + p.c + p.c_prime), base,
        add(mul(const(-lam[0]), var(0)), mul(const(-lam[1]), var(1))))
    return mul(add(quot, envelope), e)


def family_element_expr(p: BAParams, z, n: int, a: Tuple[int, int]
                        ) -> CoeffExpr:
    """theta[a/n, 0](n z + c + x, n Omega) / theta(z)^n * E(z, x)."""
    e, _ = p.exp_factor(z)
    t0 = p.backend.value(z)
    ch = Characteristic.from_rational((a[0] % n, a[1] % n), n)
    return mul(theta_node(ch, n, n * np.asarray(z) + p.c),
               const(1.0 / t0 ** n), e)


def family_indices(n: int) -> List[Tuple[int, int]]:
    return [(a1, a2) for a1 in range(n) for a2 in range(n)]


def mc_basis_values(p: BAParams, k: int, z, x, ev: Optional[Evaluator] = None
                    ) -> np.ndarray:
    """Values of the k^2 pole-order-k family members at one point."""
    ev = ev or Evaluator(p.backend)
    return np.array([ev.eval(family_element_expr(p, z, k, a), x)
                     for a in family_indices(k)])


def sample_z(p: BAParams, rng: np.random.Generator, count: int,
             clearance: float = SAMPLE_CLEARANCE) -> np.ndarray:
    """Random cell points bounded away from the theta divisor."""
    be = p.backend
    c0 = be.magnitude_scale()
    out = []
    guard = 0
    while len(out) < count:
        guard += 1
        if guard > 100 * count:
            raise OnDivisor("rejection sampling failed to clear the divisor")
        uv = rng.random(4)
        z = np.array([uv[0], uv[1]]) + p.omega.m @ np.array([uv[2], uv[3]])
        if be.clearance(z) > clearance * c0:
            out.append(z)
    return np.array(out)


def sample_x(rng: np.random.Generator, count: int,
             radius: float = X_RADIUS) -> np.ndarray:
    """Uniform draws from the complex polydisc |x_j| <= radius."""
    r = radius * np.sqrt(rng.random((count, 2)))
    phi = 2.0 * math.pi * rng.random((count, 2))
    return r * np.exp(1j * phi)


def rank_of_matrix(m: np.ndarray, cut: float = RANK_CUT
                   ) -> Tuple[int, float, np.ndarray]:
    """Numerical rank, spectral gap at the cut, and singular values.

    Columns are max-normalized first so families with different natural
    magnitudes are compared fairly.
    """
    norms = np.max(np.abs(m), axis=0)
    norms[norms == 0] = 1.0
    s = np.linalg.svd(m / norms, compute_uv=False)
    r = int(np.sum(s > cut * s[0]))
    gap = math.inf if r >= len(s) else float(s[r - 1] / max(s[r], 1e-300))
    return r, gap, s


def mc_dimension(p: BAParams, k: int, sample_count: Optional[int] = None,
                 seed: int = 0) -> Tuple[int, float, np.ndarray]:
    """Sampled dimension of the pole-order-k space at fixed x.

    Columns run over the full spanning set (families of order n = 1..k);
    rows are random z samples at one fixed x drawn from the same seed.
    The expected rank is k^2 regardless of the extra columns.
    """
    if sample_count is None:
        sample_count = max(2 * k * k, 8)
    rng = np.random.default_rng([303, seed, k])
    zs = sample_z(p, rng, sample_count)
    x = sample_x(rng, 1)[0]
    ev = Evaluator(p.backend)
    cols = [(n, a) for n in range(1, k + 1) for a in family_indices(n)]
    m = np.array([[ev.eval(family_element_expr(p, z, n, a), x)
                   for (n, a) in cols] for z in zs])
    return rank_of_matrix(m)


def freeness_rank(p: BAParams, k: int, sample_count: Optional[int] = None,
                  seed: int = 0) -> Tuple[int, float, np.ndarray]:
    """Sampled rank of {d^a psi: |a|<=k-1} u {d^a psi_c': |a|<=k-2}.

    Joint (z, x) samples; the expected rank is k^2, the full column count,
    which is the free-module statement for the pair (psi, psi_c').
    """
    alphas_psi = [(i, o - i) for o in range(k) for i in range(o + 1)]
    alphas_cp = [(i, o - i) for o in range(k - 1) for i in range(o + 1)]
    ncols = len(alphas_psi) + len(alphas_cp)
    if sample_count is None:
        sample_count = max(2 * ncols, 8)
    rng = np.random.default_rng([404, seed, k])
    zs = sample_z(p, rng, sample_count)
    xs = sample_x(rng, sample_count)
    ev = Evaluator(p.backend)
    rows = []
    for z, x in zip(zs, xs):
        f1, f2 = psi_pair(p, z)
        row = [ev.eval(x_derivative(f1, a), x) for a in alphas_psi]
        row += [ev.eval(x_derivative(f2, a), x) for a in alphas_cp]
        rows.append(row)
    return rank_of_matrix(np.array(rows))


def derivative_transfer_residual(p: BAParams, n: int, a: Tuple[int, int],
                                 j: int, z, x,
                                 ev: Optional[Evaluator] = None
                                 ) -> Tuple[float, float]:
    """|d/dx_j (family element) - (1/n) d/dz_j (quotient) * E| at (z, x).

    The left side differentiates the stored expression in x; the right
    side expands the z-derivative of theta[a/n](n z + c + x, n Omega) /
    theta(z)^n through independent theta evaluations.  Returns (residual,
    scale), scale being the larger side's magnitude.
    """
    ev = ev or Evaluator(p.backend)
    z = np.asarray(z)
    elem = family_element_expr(p, z, n, a)
    lhs = ev.eval(differentiate(elem, j), x)
    be = p.backend
    e, ld = p.exp_factor(z)
    ej = (1, 0) if j == 0 else (0, 1)
    t0 = be.value(z)
    ch = Characteristic.from_rational((a[0] % n, a[1] % n), n)
    # (1/n) d/dz_j [theta[a/n](n z + c + x, n Omega) / theta(z)^n]
    #   = theta_j[a/n](...) / theta^n - l_j(z) theta[a/n](...) / theta^n
    rhs_expr = mul(
        add(mul(theta_node(ch, n, n * z + p.c, deriv=ej), const(1.0 / t0 ** n)),
            mul(const(-ld[ej] / t0 ** n), theta_node(ch, n, n * z + p.c))),
        e)
    rhs = ev.eval(rhs_expr, x)
    return abs(lhs - rhs), max(abs(lhs), abs(rhs), 1e-300)


def psi_quasi_period_residual(p: BAParams, z, m: Tuple[int, int], x,
                              ev: Optional[Evaluator] = None,
                              include_exp: bool = True
                              ) -> Tuple[float, float]:
    """Quasi-periodicity of the Baker-Akhiezer function in z.

    The theta-quotient part f(z, c+x) = theta(z+c+x)/theta(z) transforms
    with exp(-2 pi i <m, c+x>) under z -> z + Omega m + n.  The envelope
    E contributes exp(+2 pi i <m, x>), so the full product psi = f * E
    transforms with the x-independent factor exp(-2 pi i <m, c>).  With
    `include_exp` the full psi is checked against the latter; without it,
    the quotient is checked against the former.
    """
    ev = ev or Evaluator(p.backend)
    z = np.asarray(z)
    mv = np.asarray(m, dtype=float)
    shifted = z + p.omega.m @ mv
    be = p.backend
    if include_exp:
        lhs = ev.eval(psi_expr(p, shifted), x)
        phase = const(np.exp(-2j * math.pi * (mv @ p.c)))
        rhs = ev.eval(mul(phase, psi_expr(p, z)), x)
    else:
        quot = div(theta_node(ZERO_CHAR, 1, shifted + p.c),
                   const(be.value(shifted)))
        lhs = ev.eval(quot, x)
        phase = mul(const(np.exp(-2j * math.pi * (mv @ p.c))),
                    exp_lin((-2j * math.pi * mv[0], -2j * math.pi * mv[1])))
        rhs = ev.eval(mul(phase,
                          div(theta_node(ZERO_CHAR, 1, z + p.c),
                              const(be.value(z)))), x)
    return abs(lhs - rhs), max(abs(lhs), abs(rhs), 1e-300)
