"""Command-line front end.

Subcommands:

  theta-eval   evaluate theta (optionally with characteristic/derivative)
  points       the theta zero and the two divisor intersection points
  build        run the pipeline and write the serialized operator ring
  verify       run the identity suite and write the residual report
  emit         print operator coefficients on a grid over the x-polydisc

Exit codes: 0 all requested checks pass, 1 an identity failed,
2 input or configuration error, 3 numerical non-convergence.
All numbers are printed with 17 significant digits; complex values
appear as [re, im] pairs.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Sequence

import numpy as np

from .errors import InvalidOmega, ThetaRingError
from .theta import Characteristic, RiemannMatrix, ThetaBackend
from .avgeom import find_theta_zero, intersect_divisors
from .opcalc import Evaluator, matdiffop_from_dict
from .harness import RunConfig, build_report, run_pipeline, serialize_ring, \
    to_json

EXIT_OK = 0
EXIT_IDENTITY = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _fmt(v: float) -> str:
    return "%.17g" % (v + 0.0)  # +0.0 folds -0.0 into 0


def _fmt_c(v: complex) -> str:
    v = complex(v)
    return "[%s, %s]" % (_fmt(v.real), _fmt(v.imag))


def _parse_complex_pair(text: str) -> np.ndarray:
    """Two complex numbers: 'a+bj,c+dj' or four reals 're,im,re,im'."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) == 2:
        return np.array([complex(parts[0]), complex(parts[1])])
    if len(parts) == 4:
        vals = [float(p) for p in parts]
        return np.array([complex(vals[0], vals[1]), complex(vals[2], vals[3])])
    raise ValueError(
        f"expected two complex numbers or four reals, got {text!r}")


def _load_omega(path: str) -> RiemannMatrix:
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data["omega"]
    rows = []
    for row in data:
        out = []
        for v in row:
            if isinstance(v, (list, tuple)):
                out.append(complex(v[0], v[1]))
            else:
                out.append(complex(v))
        rows.append(out)
    return RiemannMatrix(np.array(rows))


def _load_config(path: str) -> RunConfig:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return RunConfig.from_dict(data)


def _cmd_theta_eval(args) -> int:
    omega = _load_omega(args.omega_file)
    z = _parse_complex_pair(args.z)
    ch = Characteristic()
    if args.char:
        vals = [float(p) for p in args.char.split(",")]
        if len(vals) != 4:
            raise ValueError("--char takes four reals a1,a2,b1,b2")
        ch = Characteristic(a=(vals[0], vals[1]), b=(vals[2], vals[3]))
    d = (0, 0)
    if args.deriv:
        pieces = [int(p) for p in args.deriv.split(",")]
        if len(pieces) != 2 or min(pieces) < 0:
            raise ValueError("--deriv takes two non-negative ints d1,d2")
        d = (pieces[0], pieces[1])
    be = ThetaBackend(omega)
    print(_fmt_c(be.value(z, d=d, ch=ch)))
    return EXIT_OK


def _cmd_points(args) -> int:
    omega = _load_omega(args.omega_file)
    cp = _parse_complex_pair(args.c_prime)
    be = ThetaBackend(omega)
    delta = find_theta_zero(omega, seed=args.seed, backend=be)
    p1, p2 = intersect_divisors(omega, cp, seed=args.seed, backend=be)
    for name, dp in (("delta", delta), ("p1", p1), ("p2", p2)):
        coord = " ".join(_fmt_c(v) for v in dp.point.rep)
        print(f"{name} {coord} residual {_fmt(dp.residual)}")
    return EXIT_OK


def _cmd_build(args) -> int:
    config = _load_config(args.config)
    result = run_pipeline(config)
    payload = to_json(serialize_ring(result))
    with open(args.out, "w") as f:
        f.write(payload)
        f.write("\n")
    print(f"wrote {args.out} ({len(payload)} bytes, "
          f"{len(result.resamples)} resamples)")
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = _load_config(args.config)
    result = run_pipeline(config)
    report = build_report(result, only=args.only)
    payload = to_json(report)
    with open(args.report, "w") as f:
        f.write(payload)
        f.write("\n")
    for name in sorted(report["identities"]):
        entry = report["identities"][name]
        verdict = "PASS" if entry["pass"] else "FAIL"
        print(f"{verdict} {name} max_residual {_fmt(entry['max_residual'])} "
              f"tolerance {_fmt(entry['tolerance'])} "
              f"scale {_fmt(entry['scale'])} samples {entry['samples']}")
    n_fail = sum(not e["pass"] for e in report["identities"].values())
    print(f"report written to {args.report}; "
          + ("all identities pass" if n_fail == 0
             else f"{n_fail} identities failed"))
    return EXIT_OK if n_fail == 0 else EXIT_IDENTITY


def _grid_values(n: int, radius: float) -> List[float]:
    if n == 1:
        return [0.0]
    return [float(t) for t in np.linspace(-radius, radius, n)]


def _cmd_emit(args) -> int:
    with open(args.ring) as f:
        data = json.load(f)
    if not isinstance(data, dict) or data.get("format") != "operator-ring-v1":
        raise ValueError("ring file is not an operator-ring record")
    omega = RiemannMatrix(np.array(
        [[complex(v[0], v[1]) for v in row] for row in data["omega"]]))
    be = ThetaBackend(omega)
    ev = Evaluator(be)
    if args.grid < 1:
        raise ValueError("--grid must be at least 1")
    ticks = _grid_values(args.grid, args.radius)
    xs = [np.array([t1, t2], dtype=complex) for t1 in ticks for t2 in ticks]
    print(f"format operator-grid-v1 grid {args.grid} "
          f"radius {_fmt(args.radius)}")
    for name in sorted(data["operators"]):
        op = matdiffop_from_dict(data["operators"][name])
        print(f"operator {name}")
        for i in range(2):
            for j in range(2):
                print(f" entry {i + 1}{j + 1}")
                coeffs = op.rows[i][j].coeffs
                for x in xs:
                    print(f"  x {_fmt_c(x[0])} {_fmt_c(x[1])}")
                    for beta, expr in coeffs:
                        val = ev.eval(expr, x)
                        print(f"   d ({beta[0]},{beta[1]}) {_fmt_c(val)}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thetaring",
        description="Commuting matrix differential operators from genus-2 "
                    "theta functions: evaluation, construction, and "
                    "verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theta-eval", help="evaluate theta at a point")
    p.add_argument("--z", required=True,
                   help="point, as 'a+bj,c+dj' or 're,im,re,im'")
    p.add_argument("--omega-file", required=True,
                   help="JSON file with the 2x2 period matrix "
                        "(entries [re,im] or complex strings)")
    p.add_argument("--char", default=None, metavar="a1,a2,b1,b2",
                   help="real characteristic (default zero)")
    p.add_argument("--deriv", default=None, metavar="d1,d2",
                   help="z-derivative multi-index (default 0,0)")
    p.set_defaults(fn=_cmd_theta_eval)

    p = sub.add_parser(
        "points", help="theta zero and the two divisor intersection points")
    p.add_argument("--omega-file", required=True)
    p.add_argument("--c-prime", required=True,
                   help="translate, same format as --z")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_points)

    p = sub.add_parser("build", help="build and serialize the operator ring")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument("--out", default="ring.json",
                   help="output path (default ring.json)")
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("verify", help="run the identity suite")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument("--only", default=None, metavar="IDENTITY",
                   help="check a single identity by name")
    p.add_argument("--report", default="report.json",
                   help="output path (default report.json)")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser(
        "emit", help="operator coefficients on a grid over the x-polydisc")
    p.add_argument("--ring", required=True, help="serialized ring JSON file")
    p.add_argument("--grid", type=int, required=True,
                   help="grid points per axis (1 = the origin)")
    p.add_argument("--radius", type=float, default=0.1,
                   help="polydisc radius (default 0.1)")
    p.set_defaults(fn=_cmd_emit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidOmega, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ThetaRingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
