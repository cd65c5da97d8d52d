"""Baker-Akhiezer functions: pole families, transfer, rank counts."""

import numpy as np
import pytest

from thetaring.bamodule import BAParams, derivative_transfer_residual, \
    dz_psi_cprime_expr, dz_psi_expr, family_element_expr, family_indices, \
    freeness_rank, mc_dimension, psi_cprime_expr, psi_expr, \
    psi_quasi_period_residual, rank_of_matrix, sample_x, sample_z
from thetaring.errors import DivisorHit
from thetaring.opcalc import Evaluator


@pytest.fixture(scope="module")
def ev(backend):
    return Evaluator(backend)


def _points(params, count=3, seed=21):
    rng = np.random.default_rng(seed)
    return sample_z(params, rng, count), sample_x(rng, count)


def test_translate_validation_rejects_lattice_points(omega, backend):
    with pytest.raises(DivisorHit):
        BAParams(omega, np.zeros(2), np.array([0.3 + 0.1j, 0.2 + 0.4j]),
                 backend=backend)


def test_exp_factor_is_one_at_origin(params, ev):
    zs, _ = _points(params, 2)
    for z in zs:
        e, ld = params.exp_factor(z)
        assert abs(ev.eval(e, np.zeros(2)) - 1.0) <= 1e-14
        assert (2, 0) in ld and (1, 1) in ld and (0, 2) in ld


def test_psi_at_origin_is_theta_quotient(params, ev, backend):
    zs, _ = _points(params, 3)
    for z in zs:
        want = backend.value(z + params.c) / backend.value(z)
        got = ev.eval(psi_expr(params, z), np.zeros(2))
        assert abs(got - want) <= 1e-13 * max(1.0, abs(want))
        want2 = (backend.value(z + params.c + params.c_prime)
                 * backend.value(z - params.c_prime)
                 / backend.value(z) ** 2)
        got2 = ev.eval(psi_cprime_expr(params, z), np.zeros(2))
        assert abs(got2 - want2) <= 1e-13 * max(1.0, abs(want2))


def test_family_element_of_order_one_is_psi(params, ev):
    zs, xs = _points(params, 3)
    for z, x in zip(zs, xs):
        a = ev.eval(family_element_expr(params, z, 1, (0, 0)), x)
        b = ev.eval(psi_expr(params, z), x)
        assert abs(a - b) <= 1e-13 * max(1.0, abs(b))


def test_quasi_periodicity_of_psi(params, ev):
    zs, xs = _points(params, 3)
    for m in ((1, 0), (0, 1), (2, -1)):
        for z, x in zip(zs, xs):
            resid, scale = psi_quasi_period_residual(params, z, m, x, ev)
            assert resid <= 1e-11 * scale
            resid_q, scale_q = psi_quasi_period_residual(
                params, z, m, x, ev, include_exp=False)
            assert resid_q <= 1e-11 * scale_q


def test_derivative_transfer_all_characteristics(params, ev):
    zs, xs = _points(params, 2)
    for n in (1, 2):
        for a in family_indices(n):
            for j in (0, 1):
                for z, x in zip(zs, xs):
                    resid, scale = derivative_transfer_residual(
                        params, n, a, j, z, x, ev)
                    assert resid <= 1e-10 * scale


def test_z_derivative_expressions_match_finite_differences(params, ev):
    zs, xs = _points(params, 2, seed=5)
    h = 1e-6
    for builder, base in ((dz_psi_expr, psi_expr),
                          (dz_psi_cprime_expr, psi_cprime_expr)):
        for z, x in zip(zs, xs):
            for j, step in ((0, np.array([h, 0])), (1, np.array([0, h]))):
                fd = (ev.eval(base(params, z + step), x)
                      - ev.eval(base(params, z - step), x)) / (2 * h)
                exact = ev.eval(builder(params, z, j), x)
                assert abs(fd - exact) <= 1e-5 * max(1.0, abs(exact))


def test_sampling_respects_clearance_and_radius(params, backend):
    rng = np.random.default_rng(9)
    zs = sample_z(params, rng, 12)
    floor = 0.05 * backend.magnitude_scale()
    for z in zs:
        assert backend.clearance(z) > floor
    xs = sample_x(rng, 50, radius=0.07)
    assert np.max(np.abs(xs)) <= 0.07 + 1e-12


def test_rank_of_matrix_on_synthetic_input():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3))
    b = rng.standard_normal((3, 7)) + 1j * rng.standard_normal((3, 7))
    m = a @ b
    # wildly different column magnitudes must not fool the rank count
    m[:, 0] *= 1e8
    m[:, -1] *= 1e-8
    rank, gap, svals = rank_of_matrix(m)
    assert rank == 3
    assert gap > 1e6
    assert len(svals) == 7


@pytest.mark.parametrize("k", [1, 2, 3])
def test_pole_family_dimension_is_k_squared(params, k):
    rank, gap, _ = mc_dimension(params, k)
    assert rank == k * k
    assert gap > 1e3


@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivative_span_is_free_of_rank_two(params, k):
    rank, gap, _ = freeness_rank(params, k)
    assert rank == k * k
    assert gap > 1e3
