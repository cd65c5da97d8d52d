"""Expression DAG, exact differentiation, and Weyl-algebra composition."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thetaring.errors import DivisorHit, OrderCap
from thetaring.opcalc import Evaluator, DiffOp, MatDiffOp, ONE, ZERO, add, \
    apply_op, commutator, compose, const, differentiate, div, exp_lin, \
    mat_commutator, mat_compose, mat_norm_sampled, matdiffop_from_json, \
    matdiffop_to_json, mul, neg, op_norm_sampled, theta_node, var, \
    x_derivative
from thetaring.theta import ZERO_CHAR

Z0 = np.array([0.11 + 0.07j, -0.23 + 0.19j])


@pytest.fixture()
def ev(backend):
    return Evaluator(backend)


def test_constant_folding_and_canonical_forms():
    assert add(const(2), const(3 + 1j)).value == 5 + 1j
    assert mul(const(2), var(0), const(0)) is ZERO
    assert mul(const(1), var(1)) is var(1)
    assert div(var(0), const(1)) is var(0)
    assert neg(neg(var(0))) is var(0)
    assert add() is ZERO and mul() is ONE
    with pytest.raises(ZeroDivisionError):
        div(var(0), const(0))


def test_interning_gives_identical_nodes():
    a = add(var(0), mul(const(2), var(1)))
    b = add(var(0), mul(const(2), var(1)))
    assert a is b
    t1 = theta_node(ZERO_CHAR, 1, Z0)
    t2 = theta_node(ZERO_CHAR, 1, Z0.copy())
    assert t1 is t2
    assert differentiate(a, 0) is differentiate(a, 0)


def test_theta_node_evaluates_as_shifted_theta(backend, ev):
    node = theta_node(ZERO_CHAR, 1, Z0)
    x = np.array([0.03 - 0.02j, -0.01 + 0.04j])
    want = backend.value(Z0 + x)
    assert abs(ev.eval(node, x) - want) <= 1e-13 * max(1.0, abs(want))
    node10 = theta_node(ZERO_CHAR, 1, Z0, deriv=(1, 0))
    want10 = backend.value(Z0 + x, d=(1, 0))
    assert abs(ev.eval(node10, x) - want10) <= 1e-13 * max(1.0, abs(want10))


def test_differentiate_matches_finite_differences(ev):
    e = div(
        add(mul(theta_node(ZERO_CHAR, 1, Z0), var(0)),
            mul(exp_lin((0.4 - 0.1j, -0.2j)), const(1.5)),
            neg(mul(var(0), var(0), var(1)))),
        add(const(2.0), mul(var(1), var(1))))
    x = np.array([0.05 - 0.01j, 0.02 + 0.03j])
    h = 1e-6
    for j, step in ((0, np.array([h, 0])), (1, np.array([0, h]))):
        fd = (ev.eval(e, x + step) - ev.eval(e, x - step)) / (2 * h)
        exact = ev.eval(differentiate(e, j), x)
        assert abs(fd - exact) <= 1e-7 * max(1.0, abs(exact))


def test_x_derivative_composes_single_steps(ev):
    e = mul(theta_node(ZERO_CHAR, 1, Z0), var(0), var(1))
    manual = differentiate(differentiate(differentiate(e, 0), 0), 1)
    assert x_derivative(e, (2, 1)) is manual


def test_heisenberg_commutation_relation(ev):
    comm = commutator(DiffOp.partial(0), DiffOp.mult(var(0)))
    diff = comm - DiffOp.identity()
    xs = [np.array([0.1, 0.2]), np.array([0.3 - 0.1j, -0.2j])]
    assert op_norm_sampled(diff, ev, xs) <= 1e-15
    # and the commutator against the other coordinate vanishes
    comm2 = commutator(DiffOp.partial(0), DiffOp.mult(var(1)))
    assert op_norm_sampled(comm2, ev, xs) <= 1e-15


def test_composition_is_the_leibniz_product(ev):
    # P(Q f) must equal (P compose Q) f for an arbitrary smooth f
    p = DiffOp.from_dict({(1, 0): var(1), (0, 1): const(2.0),
                          (1, 1): var(0)})
    q = DiffOp.from_dict({(0, 0): mul(var(0), var(1)),
                          (1, 0): theta_node(ZERO_CHAR, 1, Z0)})
    f = mul(exp_lin((0.21 - 0.3j, 0.4j)), add(const(1), var(0)))
    x = np.array([0.04 + 0.02j, -0.03 + 0.05j])
    qf = add(*(mul(c, x_derivative(f, beta)) for beta, c in q.coeffs))
    lhs = apply_op(compose(p, q), f, x, ev)
    rhs = apply_op(p, qf, x, ev)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_composition_associativity(ev):
    a = DiffOp.from_dict({(1, 0): var(0), (0, 0): const(1 + 1j)})
    b = DiffOp.from_dict({(0, 1): mul(var(1), var(1))})
    c = DiffOp.from_dict({(1, 1): const(0.5), (0, 0): var(1)})
    left = compose(compose(a, b, 8), c, 8)
    right = compose(a, compose(b, c, 8), 8)
    xs = [np.array([0.1 - 0.05j, 0.07 + 0.02j]), np.array([0.3, -0.2])]
    assert op_norm_sampled(left - right, ev, xs) <= 1e-13


def test_order_cap_blocks_deep_composition():
    p = DiffOp.from_dict({(2, 0): ONE})
    with pytest.raises(OrderCap):
        compose(p, p)  # order 4 exceeds the default cap of 3
    assert compose(p, p, max_order=4).order == 4


def test_order_property():
    assert DiffOp.zero().order == -1
    assert DiffOp.identity().order == 0
    assert DiffOp.partial(1).order == 1
    m = MatDiffOp.from_entries(DiffOp.zero(), DiffOp.partial(0),
                               DiffOp.zero(), DiffOp.zero())
    assert m.order == 1


def test_evaluator_rejects_vanishing_denominators(ev):
    e = div(const(1), var(0))
    with pytest.raises(DivisorHit):
        ev.eval(e, np.zeros(2))


def test_matrix_composition_identity_and_self_commutator(ev, backend):
    a = MatDiffOp.from_entries(
        DiffOp.from_dict({(1, 0): ONE, (0, 0): var(1)}),
        DiffOp.mult(theta_node(ZERO_CHAR, 1, Z0)),
        DiffOp.zero(),
        DiffOp.partial(1))
    ident = MatDiffOp.identity()
    xs = [np.array([0.02 + 0.01j, -0.03j]), np.array([0.05, 0.04])]
    left = mat_compose(ident, a)
    right = mat_compose(a, ident)
    assert mat_norm_sampled(left - a, ev, xs) <= 1e-15
    assert mat_norm_sampled(right - a, ev, xs) <= 1e-15
    assert mat_norm_sampled(mat_commutator(a, a), ev, xs) <= 1e-15


def test_serialization_round_trip_is_byte_stable(ev, backend):
    a = MatDiffOp.from_entries(
        DiffOp.from_dict({
            (0, 0): div(theta_node(ZERO_CHAR, 1, Z0), const(2 + 1j)),
            (1, 0): mul(var(0), exp_lin((0.3, -0.2j), 0.1j))}),
        DiffOp.zero(),
        DiffOp.from_dict({(0, 1): neg(add(var(1), const(3)))}),
        DiffOp.identity())
    text = matdiffop_to_json(a)
    b = matdiffop_from_json(text)
    assert matdiffop_to_json(b) == text
    x = np.array([0.03 - 0.01j, 0.02 + 0.02j])
    for i in range(2):
        for j in range(2):
            ca = dict(a.entry(i, j).coeffs)
            cb = dict(b.entry(i, j).coeffs)
            assert set(ca) == set(cb)
            for beta in ca:
                va = ev.eval(ca[beta], x)
                vb = ev.eval(cb[beta], x)
                assert abs(va - vb) <= 1e-14 * max(1.0, abs(va))


@st.composite
def poly_exprs(draw, depth=0):
    """Random polynomial coefficient expressions in the two x variables."""
    leaf = st.one_of(
        st.sampled_from([var(0), var(1)]),
        st.builds(const, st.complex_numbers(max_magnitude=2.0,
                                            allow_nan=False,
                                            allow_infinity=False)))
    if depth >= 3:
        return draw(leaf)
    kind = draw(st.integers(0, 3))
    if kind == 0:
        return draw(leaf)
    if kind == 1:
        return neg(draw(poly_exprs(depth=depth + 1)))
    a = draw(poly_exprs(depth=depth + 1))
    b = draw(poly_exprs(depth=depth + 1))
    return add(a, b) if kind == 2 else mul(a, b)


@settings(max_examples=40, deadline=None)
@given(e=poly_exprs(), j=st.integers(0, 1))
def test_differentiate_property_on_polynomials(backend, e, j):
    ev = Evaluator(backend)
    x = np.array([0.13 - 0.06j, -0.09 + 0.11j])
    h = 1e-6
    step = np.array([h, 0]) if j == 0 else np.array([0, h])
    fd = (ev.eval(e, x + step) - ev.eval(e, x - step)) / (2 * h)
    exact = ev.eval(differentiate(e, j), x)
    assert abs(fd - exact) <= 2e-6 * max(1.0, abs(exact), abs(fd))
