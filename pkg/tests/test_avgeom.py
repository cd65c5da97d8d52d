"""Lattice reduction, theta zeros, and translated-divisor intersections."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thetaring.avgeom import find_theta_zero, intersect_divisors, \
    gradient_matrix, reduce_mod_lattice
from thetaring.errors import ThetaRingError

CP = np.array([0.31 + 0.17j, 0.23 + 0.41j])


def _wrap_gap(c1, c2):
    d = np.abs(np.asarray(c1) - np.asarray(c2))
    return float(np.max(np.minimum(d, 1.0 - d)))


def test_reduce_lands_in_fundamental_cell(omega):
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = rng.standard_normal(2) * 3 + 1j * rng.standard_normal(2) * 3
        pt = reduce_mod_lattice(z, omega)
        coords = np.asarray(pt.coords)
        assert np.all(coords >= 0.0) and np.all(coords < 1.0)
        # the representative reproduces its own coordinates
        u, v = coords[:2], coords[2:]
        rebuilt = u + omega.m @ v
        assert np.max(np.abs(np.asarray(pt.rep) - rebuilt)) < 1e-12
        # and differs from the input by an honest lattice vector
        diff = z - np.asarray(pt.rep)
        vpart = np.linalg.solve(omega.y, diff.imag)
        upart = diff.real - omega.x @ vpart
        assert np.max(np.abs(vpart - np.round(vpart))) < 1e-9
        assert np.max(np.abs(upart - np.round(upart))) < 1e-9


@settings(max_examples=25, deadline=None)
@given(m1=st.integers(-3, 3), m2=st.integers(-3, 3),
       n1=st.integers(-3, 3), n2=st.integers(-3, 3))
def test_reduce_is_lattice_invariant(omega, m1, m2, n1, n2):
    z = np.array([0.37 + 0.21j, -0.45 + 0.63j])
    base = reduce_mod_lattice(z, omega)
    shifted = reduce_mod_lattice(
        z + np.array([m1, m2]) + omega.m @ np.array([n1, n2]), omega)
    assert _wrap_gap(base.coords, shifted.coords) < 1e-9


def test_find_theta_zero_is_a_nonsingular_zero(omega, backend):
    dp = find_theta_zero(omega, seed=0, backend=backend)
    z = np.asarray(dp.point.rep)
    assert abs(backend.value(z)) < 1e-11
    assert dp.residual < 1e-11
    grad = np.array([backend.value(z, d=(1, 0)), backend.value(z, d=(0, 1))])
    assert np.linalg.norm(grad) > 1e-3
    # different seeds agree up to lattice translation or land on another
    # zero of the (irreducible) divisor; both must be honest zeros
    dp2 = find_theta_zero(omega, seed=5, backend=backend)
    assert abs(backend.value(np.asarray(dp2.point.rep))) < 1e-11


def test_intersection_has_exactly_two_classes(omega, backend):
    p1, p2 = intersect_divisors(omega, CP, seed=0, backend=backend)
    scale = backend.magnitude_scale()
    for dp in (p1, p2):
        z = np.asarray(dp.point.rep)
        assert abs(backend.value(z)) < 1e-11 * scale
        assert abs(backend.value(z - CP)) < 1e-11 * scale
        assert dp.residual < 1e-11 * scale
    assert _wrap_gap(p1.point.coords, p2.point.coords) > 1e-3


def test_intersection_classes_are_seed_independent(omega, backend):
    a = intersect_divisors(omega, CP, seed=0, backend=backend)
    b = intersect_divisors(omega, CP, seed=3, backend=backend)
    gaps = sorted(
        (_wrap_gap(a[0].point.coords, b[i].point.coords),
         _wrap_gap(a[1].point.coords, b[1 - i].point.coords))
        for i in range(2))
    assert min(max(pair) for pair in gaps) < 1e-8


def test_intersection_rejects_degenerate_translate(omega, backend):
    with pytest.raises(ThetaRingError):
        intersect_divisors(omega, np.zeros(2), seed=0, backend=backend)


def test_gradient_matrix_is_invertible_at_intersections(omega, backend):
    p1, p2 = intersect_divisors(omega, CP, seed=0, backend=backend)
    g = gradient_matrix(backend, np.asarray(p1.point.rep),
                        np.asarray(p2.point.rep))
    assert g.shape == (2, 2)
    assert np.linalg.cond(g) < 1e8
