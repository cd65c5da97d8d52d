"""Points on the Abelian surface C^2 / (Z^2 + Omega Z^2).

Canonical representatives use real torus coordinates: every z splits
uniquely as z = u + Omega v with real u, v, and the representative takes
both in [0, 1)^2.  Divisor data is located numerically: a nonsingular zero
of theta (found along a random complex line), and the two intersection
classes of the theta divisor with its translate by c', found by a damped
Newton iteration on the pair (theta(z), theta(z - c')) from a deterministic
multistart grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import math

import numpy as np

from .errors import Degenerate, NoConvergence, WrongCount
from .theta import RiemannMatrix, ThetaBackend

#: Residual bound on located divisor points.
ROOT_TOL = 1e-11

#: Tolerance for identifying two solutions modulo the lattice.
DEDUP_TOL = 1e-7

#: Condition-number budget for the intersection Jacobian.
COND_CAP = 1e8

#: Lower bound on the theta gradient at a usable divisor point.
GRAD_FLOOR = 1e-6

_SALT_ZERO = 101
_SALT_INTERSECT = 202


@dataclass(frozen=True)
class AbelianPoint:
    """A point with its canonical representative and lattice shift.

    z = rep + Omega m + n with torus coordinates rep = u + Omega v,
    u, v in [0,1)^2.
    """

    z: Tuple[complex, complex]
    rep: Tuple[complex, complex]
    m: Tuple[int, int]
    n: Tuple[int, int]
    coords: Tuple[float, float, float, float]  # (u1, u2, v1, v2)


@dataclass(frozen=True)
class DivisorPoint:
    """A located point on a theta divisor (or divisor intersection)."""

    point: AbelianPoint
    residual: float
    tag: str


def _split(omega: RiemannMatrix, zs: np.ndarray
           ) -> Tuple[np.ndarray, np.ndarray]:
    """Real torus coordinates (u, v) of points z = u + Omega v."""
    v = zs.imag @ omega.yinv
    u = zs.real - v @ omega.x
    return u, v


def _assemble(omega: RiemannMatrix, u: np.ndarray, v: np.ndarray
              ) -> np.ndarray:
    return u + v @ omega.m.T


def reduce_mod_lattice(z, omega: RiemannMatrix) -> AbelianPoint:
    """Canonical representative of z modulo Z^2 + Omega Z^2."""
    zs = np.asarray(z, dtype=complex).reshape(1, 2)
    u, v = _split(omega, zs)
    nf = np.floor(u)
    mf = np.floor(v)
    uf = u - nf
    vf = v - mf
    rep = _assemble(omega, uf, vf)[0]
    return AbelianPoint(
        z=(complex(zs[0, 0]), complex(zs[0, 1])),
        rep=(complex(rep[0]), complex(rep[1])),
        m=(int(mf[0, 0]), int(mf[0, 1])),
        n=(int(nf[0, 0]), int(nf[0, 1])),
        coords=(float(uf[0, 0]), float(uf[0, 1]),
                float(vf[0, 0]), float(vf[0, 1])),
    )


def _reduce_array(omega: RiemannMatrix, zs: np.ndarray) -> np.ndarray:
    u, v = _split(omega, zs)
    return _assemble(omega, u - np.floor(u), v - np.floor(v))


def _wrap_dist(c1: np.ndarray, c2: np.ndarray) -> float:
    d = np.abs(np.asarray(c1) - np.asarray(c2))
    return float(np.max(np.minimum(d, 1.0 - d)))


def _polish_single(be: ThetaBackend, z: np.ndarray, iters: int = 4
                   ) -> np.ndarray:
    """Least-norm Newton polish of a single theta zero."""
    for _ in range(iters):
        t = be.derivs(z, 1)
        g = np.array([t[(1, 0)], t[(0, 1)]])
        nrm = float(np.vdot(g, g).real)
        if nrm == 0.0:
            break
        z = z - t[(0, 0)] * g.conj() / nrm
    return z


def find_theta_zero(omega: RiemannMatrix, seed: int = 0,
                    backend: Optional[ThetaBackend] = None,
                    root_tol: float = ROOT_TOL, max_tries: int = 24
                    ) -> DivisorPoint:
    """A nonsingular zero of theta, via Newton along a random line.

    Each attempt draws a base point and a complex direction, runs the
    one-variable Newton iteration t -> t - theta/theta', and keeps the
    result only if the gradient stays above GRAD_FLOOR and the residual
    at the canonical representative is below root_tol.
    """
    be = backend or ThetaBackend(omega)
    rng = np.random.default_rng([_SALT_ZERO, seed])
    for _ in range(max_tries):
        uv = rng.random(4)
        z0 = np.array([uv[0], uv[1]]) + omega.m @ np.array([uv[2], uv[3]])
        w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        w = w / np.linalg.norm(w)
        t = 0.0 + 0.0j
        ok = False
        for _ in range(60):
            zt = z0 + t * w
            tab = be.derivs(zt, 1)
            f = tab[(0, 0)]
            fp = w[0] * tab[(1, 0)] + w[1] * tab[(0, 1)]
            if abs(fp) < GRAD_FLOOR:
                break
            step = f / fp
            if abs(step) > 1.0:
                step = step / abs(step)
            t = t - step
            if abs(step) < 1e-15:
                ok = True
                break
        if not ok:
            continue
        zero = reduce_mod_lattice(z0 + t * w, omega)
        rep = _polish_single(be, np.array(zero.rep))
        zero = reduce_mod_lattice(rep, omega)
        rep = np.array(zero.rep)
        tab = be.derivs(rep, 1)
        grad = math.hypot(abs(tab[(1, 0)]), abs(tab[(0, 1)]))
        res = abs(tab[(0, 0)])
        if res < root_tol and grad > GRAD_FLOOR:
            return DivisorPoint(point=zero, residual=res, tag="delta")
    raise NoConvergence(
        f"no nonsingular theta zero found after {max_tries} attempts")


def _newton_pair(be: ThetaBackend, omega: RiemannMatrix, zs: np.ndarray,
                 shift: np.ndarray, iters: int = 36) -> np.ndarray:
    """Vectorized Newton for theta(z) = theta(z - shift) = 0."""
    zs = zs.copy()
    for _ in range(iters):
        t0 = be.batch(zs, [(0, 0), (1, 0), (0, 1)])
        t1 = be.batch(zs - shift[None, :], [(0, 0), (1, 0), (0, 1)])
        f1, f2 = t0[(0, 0)], t1[(0, 0)]
        a, b = t0[(1, 0)], t0[(0, 1)]
        c, d = t1[(1, 0)], t1[(0, 1)]
        det = a * d - b * c
        bad = np.abs(det) < 1e-30
        det = np.where(bad, 1.0, det)
        # entries already poisoned with NaN just propagate; no warnings
        with np.errstate(invalid="ignore"):
            s1 = (d * f1 - b * f2) / det
            s2 = (a * f2 - c * f1) / det
        step = np.stack([s1, s2], axis=1)
        nrm = np.abs(step).max(axis=1)
        damp = np.where(nrm > 0.5, 0.5 / np.maximum(nrm, 1e-300), 1.0)
        zs = zs - step * damp[:, None]
        zs[bad] = np.nan
        zs = _reduce_array(omega, np.nan_to_num(zs, nan=0.0))
        zs[bad] = np.nan
    return zs


def intersect_divisors(omega: RiemannMatrix, c_prime, seed: int = 0,
                       backend: Optional[ThetaBackend] = None,
                       grid: int = 8, root_tol: float = ROOT_TOL,
                       dedup_tol: float = DEDUP_TOL,
                       cond_cap: float = COND_CAP
                       ) -> Tuple[DivisorPoint, DivisorPoint]:
    """The two intersection classes of {theta = 0} and its c'-translate.

    Runs Newton on the square system from a grid of grid^4 starts (grid
    values per real torus coordinate), clusters the converged solutions
    modulo the lattice, and demands exactly two classes.  Each returned
    point is polished at its canonical representative; the 2x2 Jacobian
    [grad theta(p); grad theta(p - c')] must have condition below cond_cap.
    """
    be = backend or ThetaBackend(omega)
    shift = np.asarray(c_prime, dtype=complex)
    rng = np.random.default_rng([_SALT_INTERSECT, seed])
    ticks = (np.arange(grid) + 0.5 + 0.25 * (rng.random(grid) - 0.5)) / grid
    uu1, uu2, vv1, vv2 = np.meshgrid(ticks, ticks, ticks, ticks,
                                     indexing="ij")
    coords = np.stack([uu1.ravel(), uu2.ravel(),
                       vv1.ravel(), vv2.ravel()], axis=1)
    starts = coords[:, :2] + coords[:, 2:] @ omega.m.T
    zs = _newton_pair(be, omega, starts.astype(complex), shift)
    good = ~np.isnan(zs[:, 0])
    zs = zs[good]
    if len(zs) == 0:
        raise NoConvergence("no Newton start converged for the intersection")
    t0 = be.batch(zs, [(0, 0)])
    t1 = be.batch(zs - shift[None, :], [(0, 0)])
    res = np.maximum(np.abs(t0[(0, 0)]), np.abs(t1[(0, 0)]))
    scale = be.magnitude_scale()
    keep = res < 1e-6 * scale
    zs, res = zs[keep], res[keep]
    if len(zs) == 0:
        raise NoConvergence("no intersection root below the residual gate")
    # Coarse-cluster the gate survivors (stragglers sit within ~1e-5 of
    # their root, classes are far apart), keep the best-converged member
    # of each cluster, and drive those few points to full precision so the
    # fine clustering below sees machine-accurate solutions.
    uco, vco = _split(omega, zs)
    allco = np.concatenate([uco % 1.0, vco % 1.0], axis=1)
    coarse: list = []
    for i in range(len(zs)):
        for cl in coarse:
            if _wrap_dist(allco[i], allco[cl[0]]) < 1e-3:
                if res[i] < res[cl[0]]:
                    cl[0] = i
                break
        else:
            coarse.append([i])
    zs = _newton_pair(be, omega, zs[[cl[0] for cl in coarse]], shift)
    zs = zs[~np.isnan(zs[:, 0])]
    if len(zs):
        t0 = be.batch(zs, [(0, 0)])
        t1 = be.batch(zs - shift[None, :], [(0, 0)])
        res = np.maximum(np.abs(t0[(0, 0)]), np.abs(t1[(0, 0)]))
        zs = zs[res < 1e-9 * scale]
    if len(zs) == 0:
        raise NoConvergence("no intersection root below the residual gate")
    uco, vco = _split(omega, zs)
    allco = np.concatenate([uco % 1.0, vco % 1.0], axis=1)
    classes: list = []
    for i in range(len(zs)):
        for cl in classes:
            if _wrap_dist(allco[i], cl[0]) < dedup_tol:
                cl[1].append(i)
                break
        else:
            classes.append((allco[i], [i]))
    if len(classes) != 2:
        raise WrongCount(
            f"expected 2 intersection classes, found {len(classes)}")
    reps = []
    for cl in classes:
        idx = cl[1][0]
        pt = reduce_mod_lattice(zs[idx], omega)
        z = np.array(pt.rep)
        # Square-system polish at the canonical representative.
        for _ in range(6):
            ta = be.derivs(z, 1)
            tb = be.derivs(z - shift, 1)
            jac = np.array([[ta[(1, 0)], ta[(0, 1)]],
                            [tb[(1, 0)], tb[(0, 1)]]])
            rhs = np.array([ta[(0, 0)], tb[(0, 0)]])
            z = z - np.linalg.solve(jac, rhs)
        pt = reduce_mod_lattice(z, omega)
        z = np.array(pt.rep)
        ta = be.derivs(z, 1)
        tb = be.derivs(z - shift, 1)
        resid = max(abs(ta[(0, 0)]), abs(tb[(0, 0)]))
        if resid > root_tol:
            raise NoConvergence(
                f"intersection residual {resid:.3g} above {root_tol:g}")
        jac = np.array([[ta[(1, 0)], ta[(0, 1)]],
                        [tb[(1, 0)], tb[(0, 1)]]])
        cond = float(np.linalg.cond(jac))
        if not np.isfinite(cond) or cond > cond_cap:
            raise Degenerate(f"intersection Jacobian condition {cond:.3g}")
        reps.append((pt, resid))
    if _wrap_dist(np.array(reps[0][0].coords),
                  np.array(reps[1][0].coords)) < 1e-5:
        raise Degenerate("intersection classes collide")
    reps.sort(key=lambda pr: tuple(round(c, 8) for c in pr[0].coords))
    return (DivisorPoint(point=reps[0][0], residual=reps[0][1], tag="p1"),
            DivisorPoint(point=reps[1][0], residual=reps[1][1], tag="p2"))


def gradient_matrix(be: ThetaBackend, p1, p2) -> np.ndarray:
    """Rows of theta gradients at two divisor points."""
    t1 = be.derivs(p1, 1)
    t2 = be.derivs(p2, 1)
    return np.array([[t1[(1, 0)], t1[(0, 1)]],
                     [t2[(1, 0)], t2[(0, 1)]]])
