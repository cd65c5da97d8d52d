"""Operator construction: eigen-relations, descent, conjugation."""

import numpy as np
import pytest

from thetaring.bamodule import BAParams, psi_cprime_expr, psi_expr, \
    psi_pair, sample_x, sample_z
from thetaring.nakayashiki import alpha_residual, change_of_basis, \
    eigen_residual, generator_function_values, generator_independence, \
    quotient_z_derivs, z_residual
from thetaring.opcalc import Evaluator, MatDiffOp, mat_apply, mat_compose, \
    mat_norm_sampled
from thetaring.theta import ZERO_CHAR


@pytest.fixture(scope="module")
def spectral(pipeline_result):
    return pipeline_result.spectral


@pytest.fixture(scope="module")
def ring(pipeline_result):
    return pipeline_result.ring


@pytest.fixture(scope="module")
def ev(spectral):
    return Evaluator(spectral.backend)


def _wrap_gap(c1, c2):
    d = np.abs(np.asarray(c1) - np.asarray(c2))
    return float(np.max(np.minimum(d, 1.0 - d)))


def test_config_points_satisfy_their_defining_equations(spectral):
    be = spectral.backend
    cp = spectral.params.c_prime
    scale = be.magnitude_scale()
    assert abs(be.value(np.array(spectral.delta.point.rep))) < 1e-11 * scale
    for pt in (spectral.p1, spectral.p2):
        z = np.array(pt.point.rep)
        assert abs(be.value(z)) < 1e-11 * scale
        assert abs(be.value(z - cp)) < 1e-11 * scale
    for pt, mate in ((spectral.q1, spectral.p1), (spectral.q2, spectral.p2)):
        z = np.array(pt.point.rep)
        assert abs(be.value(z)) < 1e-11 * scale
        assert abs(be.value(z + cp)) < 1e-11 * scale
        # q_i is the c'-pullback of p_i as a lattice class
        from thetaring.avgeom import reduce_mod_lattice
        pulled = reduce_mod_lattice(np.array(mate.point.rep) - cp,
                                    spectral.params.omega)
        assert _wrap_gap(pt.point.coords, pulled.coords) < 1e-8


def test_diagnostics_recorded(spectral):
    d = spectral.diagnostics
    assert d["denominator_clearance"] > 0
    assert np.isfinite(d["grad_cond_q"])


def test_alpha_expansion_at_fresh_points(spectral):
    rng = np.random.default_rng(31)
    for z in sample_z(spectral.params, rng, 12):
        resid, scale = alpha_residual(spectral.params, spectral.alphas, z)
        assert resid <= 1e-9 * scale


def test_quotient_derivative_expansion_matches_finite_differences(
        spectral, ev):
    be = spectral.backend
    rng = np.random.default_rng(17)
    z_star = sample_z(spectral.params, rng, 1)[0]
    c = spectral.params.c
    x = sample_x(rng, 1)[0]
    q = quotient_z_derivs(be, z_star, c)

    def ratio(z):
        return be.value(z + c + x) / be.value(z)

    h = 1e-5
    e1, e2 = np.array([h, 0]), np.array([0, h])
    checks = {
        (1, 0): (ratio(z_star + e1) - ratio(z_star - e1)) / (2 * h),
        (0, 1): (ratio(z_star + e2) - ratio(z_star - e2)) / (2 * h),
        (2, 0): (ratio(z_star + e1) - 2 * ratio(z_star)
                 + ratio(z_star - e1)) / h ** 2,
        (1, 1): (ratio(z_star + e1 + e2) - ratio(z_star + e1 - e2)
                 - ratio(z_star - e1 + e2)
                 + ratio(z_star - e1 - e2)) / (4 * h ** 2),
        (0, 2): (ratio(z_star + e2) - 2 * ratio(z_star)
                 + ratio(z_star - e2)) / h ** 2,
    }
    for key, fd in checks.items():
        exact = ev.eval(q[key], x)
        assert abs(fd - exact) <= 2e-5 * max(1.0, abs(exact))


def test_eigen_relations_at_fresh_samples(spectral, ring, ev):
    rng = np.random.default_rng(53)
    zs = sample_z(spectral.params, rng, 4)
    xs = sample_x(rng, 3)
    for dirs, op in (((0, 0), ring.L11), ((0, 1), ring.L12),
                     ((1, 1), ring.L22)):
        r, s = eigen_residual(spectral, op, dirs, zs, xs, ev)
        assert r <= 1e-9 * s
    for j, op in ((0, ring.Z1), (1, ring.Z2)):
        r, s = z_residual(spectral, op, j, zs, xs, ev)
        assert r <= 1e-9 * s


def test_eigen_residual_detects_a_corrupted_operator(spectral, ring, ev):
    rng = np.random.default_rng(54)
    zs = sample_z(spectral.params, rng, 2)
    xs = sample_x(rng, 2)
    damaged = ring.L11 + MatDiffOp.identity().scaled(1e-3)
    r, s = eigen_residual(spectral, damaged, (0, 0), zs, xs, ev)
    assert r > 1e-5 * s


def test_stored_operator_orders(ring):
    assert ring.L1.order == 0
    for op in (ring.L11, ring.L12, ring.L22, ring.Z1, ring.Z2):
        assert op.order == 2
    assert ring.third_order(0, 0, 1).order == 3


def test_third_order_descent_eigenvalues(spectral, ring, ev):
    rng = np.random.default_rng(55)
    zs = sample_z(spectral.params, rng, 3)
    xs = sample_x(rng, 2)
    for (k, j, s) in ((0, 0, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1)):
        op, prune = ring.builder.third_order(k, j, s)
        assert prune < 1e-12
        r, sc = eigen_residual(spectral, op, (k, j), zs, xs, ev, third=s)
        assert r <= 1e-9 * sc


def test_generator_functions_are_independent(spectral):
    vals = generator_function_values(
        spectral.backend,
        np.array([0.21 + 0.11j, 0.43 + 0.29j]))
    assert len(vals) == 9
    rank, gap = generator_independence(spectral.params, count=24)
    assert rank == 9
    assert gap > 1e3


def test_change_of_basis_maps_and_conjugates(spectral, ring, ev, omega):
    cpp = np.array([0.31 + 0.17j, 0.23 + 0.41j])
    a_op, a_inv = change_of_basis(spectral, cpp, ev)
    params2 = BAParams(omega, spectral.params.c, cpp,
                       backend=spectral.backend)
    rng = np.random.default_rng(56)
    zs = sample_z(spectral.params, rng, 3)
    xs = sample_x(rng, 3)
    # A (psi, psi_c')^T = (psi, psi_c'')^T pointwise
    for z in zs:
        fam = psi_pair(spectral.params, z)
        want = (psi_expr(params2, z), psi_cprime_expr(params2, z))
        for x in xs:
            got = mat_apply(a_op, fam, x, ev)
            for i in range(2):
                w = ev.eval(want[i], x)
                assert abs(got[i] - w) <= 1e-10 * max(1.0, abs(w))
    # A is invertible as an operator identity
    prod = mat_compose(a_op, a_inv, max_order=4) - MatDiffOp.identity()
    assert mat_norm_sampled(prod, ev, xs) <= 1e-10
    # and conjugation transports the eigen-relation to the new basis
    be = spectral.backend
    for dirs, op in (((0, 0), ring.L11), ((0, 1), ring.L12)):
        conj = mat_compose(mat_compose(a_op, op, max_order=6), a_inv,
                           max_order=6)
        for z in zs[:2]:
            lam = be.log_derivs(z, 2)[(2 - dirs[0] - dirs[1],
                                       dirs[0] + dirs[1])]
            fam2 = (psi_expr(params2, z), psi_cprime_expr(params2, z))
            for x in xs[:2]:
                got = mat_apply(conj, fam2, x, ev)
                want = (lam * ev.eval(fam2[0], x), lam * ev.eval(fam2[1], x))
                scale = max(1.0, abs(want[0]), abs(want[1]))
                assert abs(got[0] - want[0]) <= 1e-8 * scale
                assert abs(got[1] - want[1]) <= 1e-8 * scale
