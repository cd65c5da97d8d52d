"""Genus-2 Riemann theta functions with characteristics.

The series computed here is

    theta[a,b](z, Omega) = sum_{n in Z^2} exp(pi*i <Omega(n+a), n+a>
                                              + 2*pi*i <n+a, z+b>)

for a symmetric 2x2 period matrix Omega with positive definite imaginary
part.  Partial derivatives in z are taken term by term: the multi-index
d = (d1, d2) multiplies each term by (2*pi*i*(n+a)_1)^d1 * (2*pi*i*(n+a)_2)^d2.

Truncation is over an ellipsoid in the lattice.  Writing Omega = X + iY,
m = n + a = u + iv and w = z + b, the term magnitude is

    |term| = C * exp(-pi * |u - u0|_Y^2),
    u0 = -Y^{-1} (X v + Im w),
    C  = exp(pi <p, Y^{-1} p> + pi <v, Y v> - 2 pi <v, Re w>),  p = X v + Im w,

where |u|_Y^2 = <u, Y u>.  The absolute tail outside Y-radius R is bounded
by summing unit annuli: the number of lattice points with |u - u0|_Y in
[r, r+1) is at most area(r - rho, r + 1 + rho) / sqrt(det Y) where rho is
the Y-diameter of half a unit cell, and the derivative factor is bounded
through |m_j| <= (r+1)/sqrt(lambda_min(Y)) + |u0|_inf + |v|_inf.  The
radius returned by `truncation_radius` is the smallest point on a 0.5-step
grid whose bound falls below eps, so the truncated sum carries a provable
absolute tail < eps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple

import math

import numpy as np

from .errors import InvalidOmega, NonConvergent, OnDivisor, RadiusCap

TWO_PI_I = 2j * math.pi

#: Largest total derivative order the term-wise factors are exercised at.
#: Third-order ring generators carry coefficient theta-derivatives up to
#: order four, and commutator verification differentiates those coefficients
#: up to three more times.
MAX_DERIV_ORDER = 8

#: Hard floor on the requested series accuracy.
EPS_FLOOR = 1e-14

#: Relative tolerance for the symmetry check on Omega.
SYMMETRY_TOL = 1e-14

#: Divisor-proximity floor for logarithmic derivatives, relative to the
#: typical (lattice-invariant) theta magnitude.
DIVISOR_FLOOR = 1e-10


class MultiIndex(NamedTuple):
    """Derivative multi-index (d1, d2) with bounded total order."""

    d1: int
    d2: int

    @property
    def order(self) -> int:
        return self.d1 + self.d2

    @staticmethod
    def make(d: Sequence[int]) -> "MultiIndex":
        d1, d2 = int(d[0]), int(d[1])
        if d1 < 0 or d2 < 0:
            raise ValueError("derivative orders must be nonnegative")
        if d1 + d2 > MAX_DERIV_ORDER:
            raise ValueError(
                f"total derivative order {d1 + d2} exceeds {MAX_DERIV_ORDER}")
        return MultiIndex(d1, d2)


@dataclass(frozen=True)
class Characteristic:
    """Theta characteristic [a, b], optionally exact-rational.

    `a` and `b` are stored as complex pairs; when the characteristic is
    rational the integer data (a_num, b_num, den) is kept alongside so that
    basis families indexed by a in (Z/nZ)^2 serialize exactly.
    """

    a: Tuple[complex, complex] = (0j, 0j)
    b: Tuple[complex, complex] = (0j, 0j)
    exact: Optional[Tuple[Tuple[int, int], Tuple[int, int], int]] = None

    @classmethod
    def from_rational(cls, a_num: Tuple[int, int], den: int,
                      b_num: Tuple[int, int] = (0, 0)) -> "Characteristic":
        if den <= 0:
            raise ValueError("denominator must be positive")
        a = (complex(a_num[0] / den), complex(a_num[1] / den))
        b = (complex(b_num[0] / den), complex(b_num[1] / den))
        return cls(a=a, b=b, exact=(tuple(a_num), tuple(b_num), den))

    @property
    def is_zero(self) -> bool:
        return all(abs(c) == 0.0 for c in self.a) and \
            all(abs(c) == 0.0 for c in self.b)

    def key(self):
        if self.exact is not None:
            return ("r",) + self.exact
        return ("c",
                self.a[0].real, self.a[0].imag, self.a[1].real, self.a[1].imag,
                self.b[0].real, self.b[0].imag, self.b[1].real, self.b[1].imag)


ZERO_CHAR = Characteristic()


class RiemannMatrix:
    """Validated symmetric period matrix with positive definite Im part."""

    def __init__(self, omega, min_im_eig: float = 0.25):
        m = np.array(omega, dtype=complex)
        if m.shape != (2, 2):
            raise InvalidOmega(f"expected a 2x2 matrix, got shape {m.shape}")
        scale = max(1.0, float(np.linalg.norm(m)))
        if abs(m[0, 1] - m[1, 0]) > SYMMETRY_TOL * scale:
            raise InvalidOmega("period matrix is not symmetric")
        m = (m + m.T) / 2.0
        y = m.imag
        eigs = np.linalg.eigvalsh(y)
        if eigs[0] < min_im_eig:
            raise InvalidOmega(
                f"Im Omega eigenvalue {eigs[0]:.6g} below floor {min_im_eig}")
        self.m = m
        self.x = m.real.copy()
        self.y = y.copy()
        self.yinv = np.linalg.inv(y)
        self.ydet = float(np.linalg.det(y))
        self.ymin = float(eigs[0])
        self.ymax = float(eigs[-1])
        # Y-diameter of half a unit cell, used in the annulus point count.
        self.rho = 0.5 * math.sqrt(self.y[0, 0] + self.y[1, 1]
                                   + 2.0 * abs(self.y[0, 1]))
        self.m.setflags(write=False)

    def key(self) -> bytes:
        return self.m.tobytes()

    def scaled(self, s: int) -> "RiemannMatrix":
        return RiemannMatrix(s * self.m)

    def __repr__(self) -> str:
        return f"RiemannMatrix({self.m.tolist()!r})"


def _annulus_count(omega: RiemannMatrix, r: float) -> float:
    """Upper bound on lattice points with Y-distance to u0 in [r, r+1)."""
    outer = (r + 1.0 + omega.rho) ** 2
    inner = max(r - omega.rho, 0.0) ** 2
    return math.pi * (outer - inner) / math.sqrt(omega.ydet)


def _tail_bound(omega: RiemannMatrix, log_c: float, u0_inf: float,
                v_inf: float, order: int, radius: float) -> float:
    """Bound the absolute series tail outside Y-radius `radius`."""
    sqrt_lmin = math.sqrt(omega.ymin)
    total = 0.0
    for k in range(400):
        r = radius + k
        expo = log_c - math.pi * r * r
        if expo < -745.0:
            if k > 0:
                break
            term = 0.0
        elif expo > 700.0:
            # exp would overflow; the bound is unattainable at this radius
            term = math.inf
        else:
            m_bound = (r + 1.0) / sqrt_lmin + u0_inf + v_inf
            term = (_annulus_count(omega, r) * math.exp(expo)
                    * (2.0 * math.pi * max(m_bound, 1.0)) ** order)
        total += term
        if k > 0 and term < 1e-4 * max(total, 1e-300):
            break
    return total


def truncation_radius(omega: RiemannMatrix, im_z, d=(0, 0), eps: float = 1e-12,
                      ch: Characteristic = ZERO_CHAR, re_z=(0.0, 0.0),
                      cap: float = 25.0) -> float:
    """Smallest grid radius R with provable absolute tail < eps.

    `im_z` (and `re_z` for characteristics with complex a) refer to the
    shifted argument w = z + b.  Raises RadiusCap when no radius up to `cap`
    satisfies the bound.
    """
    if eps < EPS_FLOOR:
        raise ValueError(f"eps below floor {EPS_FLOOR}")
    d = MultiIndex.make(d)
    a = np.array(ch.a, dtype=complex)
    b = np.array(ch.b, dtype=complex)
    t = np.asarray(im_z, dtype=float) + b.imag
    s = np.asarray(re_z, dtype=float) + b.real
    v = a.imag
    p = omega.x @ v + t
    u0 = -omega.yinv @ p
    log_c = math.pi * float(p @ omega.yinv @ p) \
        + math.pi * float(v @ omega.y @ v) - 2.0 * math.pi * float(v @ s)
    u0_inf = float(np.max(np.abs(u0)))
    v_inf = float(np.max(np.abs(v)))
    r = 1.0
    while r <= cap:
        if _tail_bound(omega, log_c, u0_inf, v_inf, d.order, r) < eps:
            return r
        r += 0.5
    raise RadiusCap(
        f"truncation radius above {cap} for eps={eps:g}, |Im z|={t}")


def _lattice_values(omega: RiemannMatrix, ch: Characteristic, zs: np.ndarray,
                    derivs: Sequence[Tuple[int, int]], eps: float
                    ) -> Mapping[Tuple[int, int], np.ndarray]:
    """Truncated sums for a batch of points sharing one lattice box.

    zs has shape (M, 2); the returned arrays have shape (M,) per multi-index.
    """
    a = np.array(ch.a, dtype=complex)
    b = np.array(ch.b, dtype=complex)
    w = zs + b[None, :]
    t = w.imag
    v = a.imag
    max_order = max((d[0] + d[1] for d in derivs), default=0)
    # Worst-case radius over the batch.
    worst = int(np.argmax(np.einsum("mi,ij,mj->m", t, omega.yinv, t)))
    radius = truncation_radius(omega, t[worst], (max_order, 0), eps, ch,
                               re_z=w.real[worst] - b.real)
    centers = -((t + (omega.x @ v)[None, :]) @ omega.yinv) - a.real[None, :]
    hw = radius * np.sqrt(np.diag(omega.yinv))
    lo = np.floor(centers.min(axis=0) - hw).astype(int)
    hi = np.ceil(centers.max(axis=0) + hw).astype(int)
    n1 = np.arange(lo[0], hi[0] + 1)
    n2 = np.arange(lo[1], hi[1] + 1)
    g1, g2 = np.meshgrid(n1, n2, indexing="ij")
    m = np.stack([g1.ravel(), g2.ravel()], axis=1).astype(complex) + a[None, :]
    quad = 1j * math.pi * np.einsum("li,ij,lj->l", m, omega.m, m)
    lin = TWO_PI_I * (m @ w.T)
    expo = quad[:, None] + lin
    np.clip(expo.real, -745.0, None, out=expo.real)
    terms = np.exp(expo)
    out = {}
    f1 = TWO_PI_I * m[:, 0]
    f2 = TWO_PI_I * m[:, 1]
    for d in derivs:
        fac = f1 ** d[0] * f2 ** d[1] if d != (0, 0) else None
        col = terms if fac is None else fac[:, None] * terms
        out[tuple(d)] = col.sum(axis=0)
    return out


def _deriv_set(max_order: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((i, o - i) for o in range(max_order + 1)
                 for i in range(o, -1, -1))


class ThetaBackend:
    """Cached theta evaluation for one period matrix and accuracy target.

    Values are cached per (scale, characteristic, argument) as full tables
    of derivatives up to the largest order requested so far, so repeated
    coefficient evaluations at one point cost a single lattice pass.
    """

    def __init__(self, omega: RiemannMatrix, eps: float = 1e-12,
                 cache_limit: int = 2_000_000):
        if eps < EPS_FLOOR:
            raise ValueError(f"eps below floor {EPS_FLOOR}")
        self.omega = omega
        self.eps = eps
        self._scaled = {1: omega}
        self._cache: dict = {}
        self._c0: dict = {}
        self._cache_limit = cache_limit

    def matrix(self, scale: int = 1) -> RiemannMatrix:
        if scale not in self._scaled:
            self._scaled[scale] = self.omega.scaled(scale)
        return self._scaled[scale]

    def derivs(self, z, max_order: int = 0, ch: Characteristic = ZERO_CHAR,
               scale: int = 1) -> Mapping[Tuple[int, int], complex]:
        z0 = complex(z[0])
        z1 = complex(z[1])
        key = (scale, ch.key(), z0.real, z0.imag, z1.real, z1.imag)
        hit = self._cache.get(key)
        if hit is not None and hit[0] >= max_order:
            return hit[1]
        if len(self._cache) > self._cache_limit:
            self._cache.clear()
        zs = np.array([[z0, z1]], dtype=complex)
        vals = _lattice_values(self.matrix(scale), ch, zs,
                               _deriv_set(max_order), self.eps)
        table = {d: complex(col[0]) for d, col in vals.items()}
        self._cache[key] = (max_order, table)
        return table

    def value(self, z, d=(0, 0), ch: Characteristic = ZERO_CHAR,
              scale: int = 1) -> complex:
        d = MultiIndex.make(d)
        table = self.derivs(z, d.order, ch, scale)
        return table[(d.d1, d.d2)]

    def batch(self, zs: np.ndarray, derivs: Sequence[Tuple[int, int]],
              ch: Characteristic = ZERO_CHAR, scale: int = 1,
              eps: Optional[float] = None
              ) -> Mapping[Tuple[int, int], np.ndarray]:
        """Uncached vectorized evaluation over points (no table reuse)."""
        return _lattice_values(self.matrix(scale), ch,
                               np.asarray(zs, dtype=complex), derivs,
                               self.eps if eps is None else eps)

    def magnitude_scale(self, scale: int = 1) -> float:
        """Peak lattice-invariant magnitude of theta over the unit cell."""
        if scale not in self._c0:
            om = self.matrix(scale)
            # Fixed probe sample z = u + Omega v with (u, v) in [0,1)^4.
            rng = np.random.default_rng(20_260_823)
            uv4 = rng.random((256, 4))
            zpts = uv4[:, :2] + uv4[:, 2:] @ om.m.T
            vals = _lattice_values(om, ZERO_CHAR, zpts.astype(complex),
                                   [(0, 0)], self.eps)[(0, 0)]
            tt = uv4[:, 2:] @ om.y.T
            damp = np.exp(-math.pi * np.einsum("mi,ij,mj->m", tt, om.yinv, tt))
            self._c0[scale] = float(np.max(np.abs(vals) * damp))
        return self._c0[scale]

    def clearance(self, z, scale: int = 1) -> float:
        """Lattice-invariant magnitude |theta(z)| * exp(-pi <t, Y^-1 t>)."""
        om = self.matrix(scale)
        t = np.array([complex(z[0]).imag, complex(z[1]).imag])
        damp = math.exp(-math.pi * float(t @ om.yinv @ t))
        return abs(self.value(z, scale=scale)) * damp

    def log_derivs(self, z, max_order: int
                   ) -> Mapping[Tuple[int, int], complex]:
        """Partial derivatives of log theta at z for orders 1..max_order.

        Exact quotient-rule expansions in the theta derivatives; raises
        OnDivisor when z is too close to the divisor for stable division.
        """
        if not 1 <= max_order <= 3:
            raise ValueError("log-derivative order must be 1, 2, or 3")
        floor = DIVISOR_FLOOR * self.magnitude_scale()
        if self.clearance(z) < floor:
            raise OnDivisor(f"|theta(z)| below divisor floor at z={z}")
        t = self.derivs(z, max_order)
        t0 = t[(0, 0)]
        out: dict = {}

        def idx(*dirs):
            d1 = sum(1 for k in dirs if k == 0)
            return (d1, len(dirs) - d1)

        for i in range(2):
            out[idx(i)] = t[idx(i)] / t0
        if max_order >= 2:
            for i in range(2):
                for j in range(i, 2):
                    out[idx(i, j)] = (t[idx(i, j)] / t0
                                      - t[idx(i)] * t[idx(j)] / t0 ** 2)
        if max_order >= 3:
            for i in range(2):
                for j in range(i, 2):
                    for k in range(j, 2):
                        s2 = (t[idx(i, j)] * t[idx(k)]
                              + t[idx(i, k)] * t[idx(j)]
                              + t[idx(j, k)] * t[idx(i)])
                        s3 = t[idx(i)] * t[idx(j)] * t[idx(k)]
                        out[idx(i, j, k)] = (t[idx(i, j, k)] / t0
                                             - s2 / t0 ** 2 + 2 * s3 / t0 ** 3)
        return out


_BACKENDS: dict = {}


def get_backend(omega: RiemannMatrix, eps: float = 1e-12) -> ThetaBackend:
    key = (omega.key(), eps)
    if key not in _BACKENDS:
        _BACKENDS[key] = ThetaBackend(omega, eps)
    return _BACKENDS[key]


def theta_eval(z, omega: RiemannMatrix, ch: Characteristic = ZERO_CHAR,
               d=(0, 0), eps: float = 1e-12) -> complex:
    """Theta value or term-wise partial derivative at a single point."""
    return get_backend(omega, eps).value(z, d, ch)


def log_theta_deriv(z, omega: RiemannMatrix, d, eps: float = 1e-12) -> complex:
    """Partial derivative of log theta for 1 <= |d| <= 3."""
    d = MultiIndex.make(d)
    if not 1 <= d.order <= 3:
        raise ValueError("log-derivative order must be 1, 2, or 3")
    return get_backend(omega, eps).log_derivs(z, d.order)[(d.d1, d.d2)]
