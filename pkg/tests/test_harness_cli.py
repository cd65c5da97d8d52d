"""Pipeline orchestration, report schema, and the command-line interface."""

import dataclasses
import json

import numpy as np
import pytest

from thetaring import cli
from thetaring.harness import DEFAULT_TOLERANCES, IDENTITY_NAMES, \
    PipelineResult, RunConfig, build_report, draw_translates, serialize_ring, \
    to_json

THETA0_IDENTITY = 1.180340599016096226


def test_identity_names_all_have_tolerances():
    for name in IDENTITY_NAMES:
        assert name in DEFAULT_TOLERANCES
    assert "ring_commutativity_third" in DEFAULT_TOLERANCES


def test_run_config_round_trip():
    cfg = RunConfig(seed=3, samples=17, tolerance_scale=2.0,
                    tolerances={"theta_quasiperiodicity": 1e-9},
                    c=(0.1 + 0.2j, 0.3 + 0.4j),
                    c_prime=(0.5 + 0.6j, 0.7 + 0.8j))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.tolerance("theta_quasiperiodicity") == 2e-9
    assert again.tolerance("basis_conjugation") == 2e-6


def test_draw_translates_is_deterministic(omega):
    a = draw_translates(omega, seed=4, attempt=1)
    b = draw_translates(omega, seed=4, attempt=1)
    c = draw_translates(omega, seed=4, attempt=2)
    assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1])
    assert not np.allclose(a[1], c[1])


def test_serialized_ring_schema(pipeline_result):
    ring = serialize_ring(pipeline_result)
    assert ring["format"] == "operator-ring-v1"
    assert set(ring["operators"]) == {"L1", "L11", "L12", "L22", "Z1", "Z2",
                                      "T111", "T112", "T122", "T222"}
    assert set(ring["points"]) == {"delta", "p1", "p2", "q1", "q2"}
    for rec in ring["points"].values():
        assert rec["residual"] < 1e-11
    # canonical JSON survives a parse round trip byte for byte
    text = to_json(ring)
    assert to_json(json.loads(text)) == text


def test_report_covers_every_identity_exactly_once(report):
    assert set(report["identities"]) == set(IDENTITY_NAMES)
    assert report["format"] == "residual-report-v1"
    assert "python" in report["environment"]
    assert report["all_pass"] is True


def test_report_only_filter(pipeline_result):
    rep = build_report(pipeline_result, only="alpha_expansion_holdout")
    assert set(rep["identities"]) == {"alpha_expansion_holdout"}
    with pytest.raises(ValueError):
        build_report(pipeline_result, only="not_an_identity")


def test_zero_tolerance_fails_every_checked_identity(pipeline_result):
    cfg0 = dataclasses.replace(pipeline_result.config, tolerance_scale=0.0)
    frozen = PipelineResult(config=cfg0, spectral=pipeline_result.spectral,
                            ring=pipeline_result.ring, resamples=[])
    for name in ("theta_quasiperiodicity", "alpha_expansion_holdout",
                 "generator_independence"):
        rep = build_report(frozen, only=name)
        assert rep["identities"][name]["pass"] is False
        assert rep["all_pass"] is False


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture()
def omega_file(tmp_path):
    path = tmp_path / "omega.json"
    path.write_text(json.dumps(
        {"omega": [[[0, 1.0], [0, 0.3]], [[0, 0.3], [0, 1.2]]]}))
    return str(path)


@pytest.fixture()
def identity_omega_file(tmp_path):
    path = tmp_path / "omega_i.json"
    path.write_text(json.dumps([[[0, 1.0], [0, 0]], [[0, 0], [0, 1.0]]]))
    return str(path)


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 0}))
    return str(path)


def test_cli_requires_a_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_cli_theta_eval_frozen_regression(identity_omega_file, capsys):
    code = cli.main(["theta-eval", "--z", "0,0,0,0",
                     "--omega-file", identity_omega_file])
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("[") and out.endswith("]")
    re_part, im_part = out[1:-1].split(",")
    assert abs(float(re_part) - THETA0_IDENTITY) < 1e-15
    assert float(im_part) == 0.0


def test_cli_theta_eval_with_char_and_deriv(omega_file, backend, capsys):
    code = cli.main(["theta-eval", "--z", "0.11+0.07j,-0.23+0.19j",
                     "--omega-file", omega_file,
                     "--char", "0.5,0.5,0.25,0", "--deriv", "0,1"])
    assert code == 0
    out = capsys.readouterr().out.strip()
    re_part, im_part = out[1:-1].split(",")
    got = complex(float(re_part), float(im_part))
    want = complex(1.4571705850659897874, -0.3738282939742286209)
    assert abs(got - want) < 1e-14


def test_cli_rejects_malformed_input(omega_file, capsys):
    assert cli.main(["theta-eval", "--z", "1,2,3",
                     "--omega-file", omega_file]) == 2
    assert "error:" in capsys.readouterr().err
    assert cli.main(["theta-eval", "--z", "0,0,0,0",
                     "--omega-file", "/nonexistent.json"]) == 2
    assert cli.main(["emit", "--ring", omega_file, "--grid", "1"]) == 2


def test_cli_points(omega_file, capsys):
    code = cli.main(["points", "--omega-file", omega_file,
                     "--c-prime", "0.31+0.17j,0.23+0.41j"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split()[0] for ln in lines] == ["delta", "p1", "p2"]
    for ln in lines:
        assert float(ln.split()[-1]) < 1e-11


def test_cli_build_emit_verify_cycle(tmp_path, config_file, capsys):
    ring_path = str(tmp_path / "ring.json")
    assert cli.main(["build", "--config", config_file,
                     "--out", ring_path]) == 0
    capsys.readouterr()
    data = json.loads(open(ring_path).read())
    assert data["format"] == "operator-ring-v1"

    # grid 1 places the single sample at the origin, where the first
    # translation operator's corner entry must be the bare d/dx_1
    assert cli.main(["emit", "--ring", ring_path, "--grid", "1"]) == 0
    out = capsys.readouterr().out
    block = out.split("operator Z1\n")[1].split("operator Z2\n")[0]
    entry11 = block.split(" entry 11\n")[1].split(" entry 12\n")[0]
    coeffs = {}
    for line in entry11.strip().splitlines():
        parts = line.split()
        if parts[0] == "d":
            coeffs[parts[1]] = (float(parts[2][1:-1]), float(parts[3][:-1]))
    assert coeffs["(1,0)"] == (1.0, 0.0)
    for key, val in coeffs.items():
        if key != "(1,0)":
            assert val == (0.0, 0.0)

    report_path = str(tmp_path / "report.json")
    assert cli.main(["verify", "--config", config_file,
                     "--only", "theta_quasiperiodicity",
                     "--report", report_path]) == 0
    out = capsys.readouterr().out
    assert "PASS theta_quasiperiodicity" in out
    rep = json.loads(open(report_path).read())
    assert rep["all_pass"] is True


def test_cli_build_is_byte_deterministic(tmp_path, config_file):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert cli.main(["build", "--config", config_file, "--out", a]) == 0
    assert cli.main(["build", "--config", config_file, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_cli_verify_zero_tolerance_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "zero.json"
    cfg.write_text(json.dumps({"seed": 0, "tolerance_scale": 0.0}))
    code = cli.main(["verify", "--config", str(cfg),
                     "--only", "alpha_expansion_holdout",
                     "--report", str(tmp_path / "r.json")])
    assert code == 1
    assert "FAIL alpha_expansion_holdout" in capsys.readouterr().out
