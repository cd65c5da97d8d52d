"""Exact coefficient expressions and matrix differential operators in x.

Operator coefficients are closed-form expressions in x = (x1, x2) built
from complex constants, the variables themselves, theta values at affine
arguments z0 + A x (with a derivative multi-index applied term-wise), and
exponentials of linear forms.  The grammar is closed under d/dx_j, so
operators compose exactly by the Leibniz rule and every identity check
reduces to sampling coefficient values.

Nodes are immutable and hash-consed: structurally equal expressions are
the same object, differentiation is memoized globally, and evaluation
memoizes per sample point, so the large DAGs produced by composing ring
generators stay shared and cheap to walk.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Dict, Mapping, Sequence, Tuple, Union

import json
import sys

import numpy as np

# Composed-operator DAGs nest a few hundred levels deep.
sys.setrecursionlimit(max(100_000, sys.getrecursionlimit()))

from .errors import DivisorHit, MissingDerivative, OrderCap
from .theta import Characteristic, MultiIndex, ThetaBackend

#: Relative floor for division by a coefficient value.
DIV_FLOOR = 1e-13

#: Default cap on the total order of stored operator compositions.
DEFAULT_ORDER_CAP = 3

Idx = Tuple[int, int]

_INTERN: Dict = {}


def _intern(key, node):
    """Return the canonical node for a structural key.

    Keys reference children by id(); children are interned before their
    parents and the table keeps every node alive, so identity coincides
    with structural equality and no recursive hashing ever happens.
    """
    got = _INTERN.get(key)
    if got is None:
        _INTERN[key] = node
        got = node
    return got


class CoeffExpr:
    """Base class for coefficient expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=False)
class Const(CoeffExpr):
    value: complex


@dataclass(frozen=True, eq=False)
class Var(CoeffExpr):
    index: int  # 0 -> x1, 1 -> x2


@dataclass(frozen=True, eq=False)
class ThetaNode(CoeffExpr):
    """theta[ch]^(deriv)(z0 + A x, scale * Omega)."""

    ch: Characteristic
    scale: int
    z0: Tuple[complex, complex]
    amat: Tuple[Tuple[complex, complex], Tuple[complex, complex]]
    deriv: Idx


@dataclass(frozen=True, eq=False)
class ExpLin(CoeffExpr):
    """exp(v1 x1 + v2 x2 + w)."""

    v: Tuple[complex, complex]
    w: complex


@dataclass(frozen=True, eq=False)
class Add(CoeffExpr):
    terms: Tuple[CoeffExpr, ...]


@dataclass(frozen=True, eq=False)
class Mul(CoeffExpr):
    factors: Tuple[CoeffExpr, ...]


@dataclass(frozen=True, eq=False)
class Div(CoeffExpr):
    num: CoeffExpr
    den: CoeffExpr


@dataclass(frozen=True, eq=False)
class Neg(CoeffExpr):
    arg: CoeffExpr


def const(v) -> Const:
    v = complex(v)
    return _intern(("c", v), Const(v))


ZERO = const(0j)
ONE = const(1 + 0j)


def var(index: int) -> Var:
    if index not in (0, 1):
        raise ValueError("variable index must be 0 or 1")
    return _intern(("v", index), Var(index))


def theta_node(ch: Characteristic, scale: int, z0, amat=None,
               deriv: Idx = (0, 0)) -> ThetaNode:
    if amat is None:
        amat = ((1 + 0j, 0j), (0j, 1 + 0j))
    z0 = (complex(z0[0]), complex(z0[1]))
    amat = ((complex(amat[0][0]), complex(amat[0][1])),
            (complex(amat[1][0]), complex(amat[1][1])))
    d = MultiIndex.make(deriv)
    key = ("t", ch, int(scale), z0, amat, (d.d1, d.d2))
    return _intern(key, ThetaNode(ch, int(scale), z0, amat, (d.d1, d.d2)))


def exp_lin(v, w=0j) -> CoeffExpr:
    v = (complex(v[0]), complex(v[1]))
    w = complex(w)
    if v == (0j, 0j) and w == 0j:
        return ONE
    return _intern(("e", v, w), ExpLin(v, w))


def as_expr(x) -> CoeffExpr:
    if isinstance(x, CoeffExpr):
        return x
    return const(x)


def add(*terms) -> CoeffExpr:
    flat = []
    csum = 0j
    for t in terms:
        t = as_expr(t)
        if isinstance(t, Add):
            flat.extend(t.terms)
        elif isinstance(t, Const):
            csum += t.value
        else:
            flat.append(t)
    for t in list(flat):
        if isinstance(t, Const):  # from flattened Adds
            csum += t.value
            flat.remove(t)
    if csum != 0:
        flat.append(const(csum))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    flat = tuple(flat)
    return _intern(("a",) + tuple(map(id, flat)), Add(flat))


def mul(*factors) -> CoeffExpr:
    flat = []
    cprod = 1 + 0j
    for f in factors:
        f = as_expr(f)
        if isinstance(f, Mul):
            flat.extend(f.factors)
        elif isinstance(f, Const):
            cprod *= f.value
        else:
            flat.append(f)
    for f in list(flat):
        if isinstance(f, Const):
            cprod *= f.value
            flat.remove(f)
    if cprod == 0:
        return ZERO
    if cprod != 1:
        flat.insert(0, const(cprod))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    flat = tuple(flat)
    return _intern(("m",) + tuple(map(id, flat)), Mul(flat))


def div(num, den) -> CoeffExpr:
    num = as_expr(num)
    den = as_expr(den)
    if isinstance(num, Const) and num.value == 0:
        return ZERO
    if isinstance(den, Const):
        if den.value == 0:
            raise ZeroDivisionError("division by constant zero")
        if den.value == 1:
            return num
        if isinstance(num, Const):
            return const(num.value / den.value)
    return _intern(("d", id(num), id(den)), Div(num, den))


def neg(arg) -> CoeffExpr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return const(-arg.value)
    if isinstance(arg, Neg):
        return arg.arg
    return _intern(("n", id(arg)), Neg(arg))


_DIFF_MEMO: Dict = {}


def differentiate(e: CoeffExpr, j: int) -> CoeffExpr:
    """d/dx_j of a coefficient expression (exact, memoized)."""
    if j not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    key = (id(e), j)
    hit = _DIFF_MEMO.get(key)
    if hit is not None:
        return hit
    if isinstance(e, (Const,)):
        out = ZERO
    elif isinstance(e, Var):
        out = ONE if e.index == j else ZERO
    elif isinstance(e, ThetaNode):
        terms = []
        for i in range(2):
            a_ij = e.amat[i][j]
            if a_ij == 0:
                continue
            bump = (e.deriv[0] + (1 if i == 0 else 0),
                    e.deriv[1] + (1 if i == 1 else 0))
            node = theta_node(e.ch, e.scale, e.z0, e.amat, bump)
            terms.append(mul(const(a_ij), node))
        out = add(*terms)
    elif isinstance(e, ExpLin):
        out = mul(const(e.v[j]), e)
    elif isinstance(e, Add):
        out = add(*(differentiate(t, j) for t in e.terms))
    elif isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i in range(len(fs)):
            di = differentiate(fs[i], j)
            if di is ZERO:
                continue
            terms.append(mul(*fs[:i], di, *fs[i + 1:]))
        out = add(*terms)
    elif isinstance(e, Div):
        dn = differentiate(e.num, j)
        dd = differentiate(e.den, j)
        out = div(add(mul(dn, e.den), neg(mul(e.num, dd))),
                  mul(e.den, e.den))
    elif isinstance(e, Neg):
        out = neg(differentiate(e.arg, j))
    else:
        raise TypeError(f"unknown node type {type(e)!r}")
    _DIFF_MEMO[key] = out
    return out


def x_derivative(e: CoeffExpr, beta: Idx) -> CoeffExpr:
    for _ in range(beta[0]):
        e = differentiate(e, 0)
    for _ in range(beta[1]):
        e = differentiate(e, 1)
    return e


class Evaluator:
    """Evaluates coefficient expressions at sample points x.

    Values are memoized per point across calls, so all coefficients of a
    composed operator share subexpression work; theta leaves additionally
    hit the backend's derivative-table cache.
    """

    def __init__(self, backend: ThetaBackend, memo_points: int = 64):
        self.backend = backend
        self._memos: Dict = {}
        self._limit = memo_points

    def eval(self, e: CoeffExpr, x) -> complex:
        x = (complex(x[0]), complex(x[1]))
        key = (x[0].real, x[0].imag, x[1].real, x[1].imag)
        memo = self._memos.get(key)
        if memo is None:
            if len(self._memos) >= self._limit:
                self._memos.clear()
            memo = self._memos[key] = {}
        return self._eval(e, x, memo)

    def _eval(self, e: CoeffExpr, x, memo) -> complex:
        hit = memo.get(id(e))
        if hit is not None:
            return hit
        if isinstance(e, Const):
            val = e.value
        elif isinstance(e, Var):
            val = x[e.index]
        elif isinstance(e, ThetaNode):
            arg = (e.z0[0] + e.amat[0][0] * x[0] + e.amat[0][1] * x[1],
                   e.z0[1] + e.amat[1][0] * x[0] + e.amat[1][1] * x[1])
            order = e.deriv[0] + e.deriv[1]
            val = self.backend.derivs(arg, order, e.ch, e.scale)[e.deriv]
        elif isinstance(e, ExpLin):
            val = np.exp(e.v[0] * x[0] + e.v[1] * x[1] + e.w)
        elif isinstance(e, Add):
            val = 0j
            for t in e.terms:
                val += self._eval(t, x, memo)
        elif isinstance(e, Mul):
            val = 1 + 0j
            for f in e.factors:
                val *= self._eval(f, x, memo)
        elif isinstance(e, Div):
            num = self._eval(e.num, x, memo)
            den = self._eval(e.den, x, memo)
            if abs(den) < DIV_FLOOR * max(1.0, abs(num)):
                raise DivisorHit(
                    f"coefficient denominator {abs(den):.3g} below floor")
            val = num / den
        elif isinstance(e, Neg):
            val = -self._eval(e.arg, x, memo)
        else:
            raise TypeError(f"unknown node type {type(e)!r}")
        memo[id(e)] = val
        return val


# ---------------------------------------------------------------------------
# Scalar differential operators


@dataclass(frozen=True)
class DiffOp:
    """sum_beta coeff_beta(x) d^beta, stored sorted by multi-index."""

    coeffs: Tuple[Tuple[Idx, CoeffExpr], ...]

    @staticmethod
    def from_dict(d: Mapping[Idx, CoeffExpr]) -> "DiffOp":
        items = []
        for beta in sorted(d):
            c = as_expr(d[beta])
            if c is ZERO:
                continue
            items.append(((int(beta[0]), int(beta[1])), c))
        return DiffOp(tuple(items))

    @staticmethod
    def zero() -> "DiffOp":
        return DiffOp(())

    @staticmethod
    def identity() -> "DiffOp":
        return DiffOp.from_dict({(0, 0): ONE})

    @staticmethod
    def partial(j: int) -> "DiffOp":
        beta = (1, 0) if j == 0 else (0, 1)
        return DiffOp.from_dict({beta: ONE})

    @staticmethod
    def mult(expr) -> "DiffOp":
        return DiffOp.from_dict({(0, 0): as_expr(expr)})

    def as_dict(self) -> Dict[Idx, CoeffExpr]:
        return dict(self.coeffs)

    @property
    def order(self) -> int:
        return max((b[0] + b[1] for b, _ in self.coeffs), default=-1)

    def __add__(self, other: "DiffOp") -> "DiffOp":
        out = self.as_dict()
        for beta, c in other.coeffs:
            out[beta] = add(out[beta], c) if beta in out else c
        return DiffOp.from_dict(out)

    def __sub__(self, other: "DiffOp") -> "DiffOp":
        return self + other.scaled(-1)

    def scaled(self, factor) -> "DiffOp":
        f = as_expr(factor)
        return DiffOp.from_dict(
            {beta: mul(f, c) for beta, c in self.coeffs})

    def left_mult(self, expr) -> "DiffOp":
        """Multiplication by a function from the left: expr * P."""
        return self.scaled(expr)


def compose(p: DiffOp, q: DiffOp, max_order: int = DEFAULT_ORDER_CAP
            ) -> DiffOp:
    """Operator product P Q by the Leibniz rule."""
    top = max((pb[0] + pb[1] + qb[0] + qb[1]
               for pb, _ in p.coeffs for qb, _ in q.coeffs), default=-1)
    if top > max_order:
        raise OrderCap(f"composition order {top} exceeds cap {max_order}")
    out: Dict[Idx, list] = {}
    for beta, pc in p.coeffs:
        for gamma, qc in q.coeffs:
            for m1 in range(beta[0] + 1):
                for m2 in range(beta[1] + 1):
                    key = (m1 + gamma[0], m2 + gamma[1])
                    cnum = comb(beta[0], m1) * comb(beta[1], m2)
                    dq = x_derivative(qc, (beta[0] - m1, beta[1] - m2))
                    term = mul(const(cnum), pc, dq)
                    out.setdefault(key, []).append(term)
    return DiffOp.from_dict({k: add(*v) for k, v in out.items()})


def commutator(p: DiffOp, q: DiffOp, max_order: int = 8) -> DiffOp:
    return compose(p, q, max_order) - compose(q, p, max_order)


Family = Union[CoeffExpr, Mapping[Idx, complex]]


def apply_op(p: DiffOp, fam: Family, x, ev: Evaluator) -> complex:
    """Value of (P f)(x) for an evaluable family f.

    The family is either a coefficient expression (derivatives generated
    exactly) or a mapping from multi-indices to derivative values at x.
    """
    total = 0j
    for beta, c in p.coeffs:
        cval = ev.eval(c, x)
        if isinstance(fam, CoeffExpr):
            fval = ev.eval(x_derivative(fam, beta), x)
        else:
            if beta not in fam:
                raise MissingDerivative(
                    f"family lacks derivative {beta}")
            fval = fam[beta]
        total += cval * fval
    return total


def op_norm_sampled(p: DiffOp, ev: Evaluator, xs: Sequence) -> float:
    """Max coefficient magnitude over sample points."""
    best = 0.0
    for x in xs:
        for _, c in p.coeffs:
            best = max(best, abs(ev.eval(c, x)))
    return best


# ---------------------------------------------------------------------------
# 2x2 matrix operators


@dataclass(frozen=True)
class MatDiffOp:
    rows: Tuple[Tuple[DiffOp, DiffOp], Tuple[DiffOp, DiffOp]]

    @staticmethod
    def from_entries(a11, a12, a21, a22) -> "MatDiffOp":
        return MatDiffOp(((a11, a12), (a21, a22)))

    @staticmethod
    def identity() -> "MatDiffOp":
        one = DiffOp.identity()
        zero = DiffOp.zero()
        return MatDiffOp.from_entries(one, zero, zero, one)

    @staticmethod
    def zero() -> "MatDiffOp":
        z = DiffOp.zero()
        return MatDiffOp.from_entries(z, z, z, z)

    def entry(self, i: int, j: int) -> DiffOp:
        return self.rows[i][j]

    @property
    def order(self) -> int:
        return max(op.order for row in self.rows for op in row)

    def __add__(self, other: "MatDiffOp") -> "MatDiffOp":
        return MatDiffOp(tuple(
            tuple(self.rows[i][j] + other.rows[i][j] for j in range(2))
            for i in range(2)))

    def __sub__(self, other: "MatDiffOp") -> "MatDiffOp":
        return MatDiffOp(tuple(
            tuple(self.rows[i][j] - other.rows[i][j] for j in range(2))
            for i in range(2)))

    def scaled(self, factor) -> "MatDiffOp":
        return MatDiffOp(tuple(
            tuple(self.rows[i][j].scaled(factor) for j in range(2))
            for i in range(2)))


def mat_compose(p: MatDiffOp, q: MatDiffOp,
                max_order: int = DEFAULT_ORDER_CAP) -> MatDiffOp:
    rows = []
    for i in range(2):
        row = []
        for k in range(2):
            acc = DiffOp.zero()
            for j in range(2):
                acc = acc + compose(p.rows[i][j], q.rows[j][k], max_order)
            row.append(acc)
        rows.append(tuple(row))
    return MatDiffOp((rows[0], rows[1]))


def mat_commutator(p: MatDiffOp, q: MatDiffOp, max_order: int = 8
                   ) -> MatDiffOp:
    return mat_compose(p, q, max_order) - mat_compose(q, p, max_order)


def mat_apply(p: MatDiffOp, fam_pair, x, ev: Evaluator
              ) -> Tuple[complex, complex]:
    out = []
    for i in range(2):
        out.append(apply_op(p.rows[i][0], fam_pair[0], x, ev)
                   + apply_op(p.rows[i][1], fam_pair[1], x, ev))
    return (out[0], out[1])


def mat_norm_sampled(p: MatDiffOp, ev: Evaluator, xs: Sequence) -> float:
    return max(op_norm_sampled(p.rows[i][j], ev, xs)
               for i in range(2) for j in range(2))


# ---------------------------------------------------------------------------
# Serialization: operators stored as a shared node table plus entry maps.


def _fmt_complex(c: complex):
    return [c.real, c.imag]


def _char_record(ch: Characteristic):
    if ch.exact is not None:
        return {"rational": [list(ch.exact[0]), list(ch.exact[1]),
                             ch.exact[2]]}
    return {"a": [_fmt_complex(v) for v in ch.a],
            "b": [_fmt_complex(v) for v in ch.b]}


def _char_from_record(rec) -> Characteristic:
    if "rational" in rec:
        a_num, b_num, den = rec["rational"]
        return Characteristic.from_rational(tuple(a_num), den, tuple(b_num))
    a = tuple(complex(v[0], v[1]) for v in rec["a"])
    b = tuple(complex(v[0], v[1]) for v in rec["b"])
    return Characteristic(a=a, b=b)


class _NodeWriter:
    def __init__(self):
        self.records = []
        self.ids: Dict[int, int] = {}

    def visit(self, e: CoeffExpr) -> int:
        got = self.ids.get(id(e))
        if got is not None:
            return got
        if isinstance(e, Const):
            rec = {"t": "const", "v": _fmt_complex(e.value)}
        elif isinstance(e, Var):
            rec = {"t": "var", "i": e.index}
        elif isinstance(e, ThetaNode):
            rec = {"t": "theta", "ch": _char_record(e.ch), "scale": e.scale,
                   "z0": [_fmt_complex(v) for v in e.z0],
                   "amat": [[_fmt_complex(v) for v in row]
                            for row in e.amat],
                   "deriv": list(e.deriv)}
        elif isinstance(e, ExpLin):
            rec = {"t": "explin", "v": [_fmt_complex(v) for v in e.v],
                   "w": _fmt_complex(e.w)}
        elif isinstance(e, Add):
            rec = {"t": "add", "args": [self.visit(t) for t in e.terms]}
        elif isinstance(e, Mul):
            rec = {"t": "mul", "args": [self.visit(f) for f in e.factors]}
        elif isinstance(e, Div):
            rec = {"t": "div",
                   "args": [self.visit(e.num), self.visit(e.den)]}
        elif isinstance(e, Neg):
            rec = {"t": "neg", "arg": self.visit(e.arg)}
        else:
            raise TypeError(f"unknown node type {type(e)!r}")
        nid = len(self.records)
        self.records.append(rec)
        self.ids[id(e)] = nid
        return nid


def matdiffop_to_dict(p: MatDiffOp) -> dict:
    w = _NodeWriter()
    entries = []
    for i in range(2):
        row = []
        for j in range(2):
            ent = [[list(beta), w.visit(c)]
                   for beta, c in p.rows[i][j].coeffs]
            row.append(ent)
        entries.append(row)
    return {"format": "matdiffop-v1", "nodes": w.records,
            "entries": entries}


def matdiffop_from_dict(data: dict) -> MatDiffOp:
    if data.get("format") != "matdiffop-v1":
        raise ValueError("unrecognized operator record")
    built: list = []
    for rec in data["nodes"]:
        t = rec["t"]
        if t == "const":
            node = const(complex(rec["v"][0], rec["v"][1]))
        elif t == "var":
            node = var(rec["i"])
        elif t == "theta":
            node = theta_node(
                _char_from_record(rec["ch"]), rec["scale"],
                [complex(v[0], v[1]) for v in rec["z0"]],
                [[complex(v[0], v[1]) for v in row] for row in rec["amat"]],
                tuple(rec["deriv"]))
        elif t == "explin":
            node = exp_lin([complex(v[0], v[1]) for v in rec["v"]],
                           complex(rec["w"][0], rec["w"][1]))
        elif t == "add":
            node = add(*(built[i] for i in rec["args"]))
        elif t == "mul":
            node = mul(*(built[i] for i in rec["args"]))
        elif t == "div":
            node = div(built[rec["args"][0]], built[rec["args"][1]])
        elif t == "neg":
            node = neg(built[rec["arg"]])
        else:
            raise ValueError(f"unknown node tag {t!r}")
        built.append(node)
    rows = []
    for i in range(2):
        row = []
        for j in range(2):
            coeffs = {tuple(beta): built[nid]
                      for beta, nid in data["entries"][i][j]}
            row.append(DiffOp.from_dict(coeffs))
        rows.append(tuple(row))
    return MatDiffOp((rows[0], rows[1]))


def matdiffop_to_json(p: MatDiffOp) -> str:
    return json.dumps(matdiffop_to_dict(p), sort_keys=True,
                      separators=(",", ":"))


def matdiffop_from_json(text: str) -> MatDiffOp:
    return matdiffop_from_dict(json.loads(text))
