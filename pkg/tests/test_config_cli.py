import json

import pytest

from gradflow import cli
from gradflow.config import bundled_scenarios, load_config, parse_config
from gradflow.errors import ConfigError

MINIMAL = {"model": "RE", "n": 3, "lambdas": [[1, 0], [0, 0], [-1, 0]]}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


class TestConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        assert cfg.kind.value == "RestrictedEuler" and cfg.model.n == 3
        integ = cfg.integration
        assert (integ["rel_tol"], integ["abs_tol"], integ["t_max"], integ["blowup_threshold"]) == (
            1e-8, 1e-10, 100.0, 1e8)
        assert cfg.output["format"] == "csv"

    def test_exclusive_initial_blocks(self):
        raw = dict(MINIMAL, M0=[1, 0, 0, 0, 0, 0, 0, 0, -1])
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert info.value.field == "initial"

    def test_round_trip(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        again = load_config(write(tmp_path, json.loads(cfg.to_json()), "again.json"))
        assert again == cfg and again.to_json() == cfg.to_json()

    @pytest.mark.parametrize("raw,field", [
        ({"n": 3, "lambdas": [1, 2, 3]}, "model"),
        (dict(MINIMAL, bogus=1), "bogus"),
        (dict(MINIMAL, integration={"rel_tol": -1}), "integration.rel_tol"),
        (dict(MINIMAL, integration={"stepper": "rk4"}), "integration.stepper"),
        (dict(MINIMAL, lambdas=[[1, 0], [0, 0]]), "initial.lambdas"),
        ({"model": "REP", "n": 2, "params": {"k": 1}, "lambdas": [1, 2]}, "initial.rho0"),
        (dict(MINIMAL, sweep={"ranges": [[1, 1]]}), "sweep.ranges[0]"),
        (dict(MINIMAL, output={"format": "xml"}), "output.format"),
    ])
    def test_errors_name_field(self, raw, field):
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert info.value.field == field

    def test_bundled_scenarios_parse(self):
        names = bundled_scenarios()
        assert "re3d_breakdown" in names
        for name in names:
            load_config(name)


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


class TestCommands:
    def test_simulate_re(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert run_cli("simulate", "--config", write(tmp_path, MINIMAL), "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        (row,) = report["invariant_drift"]
        assert row["initial"] == pytest.approx(-2.0)
        assert row["max_relative_drift"] <= 1e-6
        assert report["verdicts"][0]["outcome"] == "FiniteTimeBreakdown"
        assert (out / "trajectory.csv").read_text().startswith("t,")
        assert "wall_time_s" in json.loads((out / "timing.json").read_text())

    def test_simulate_rep_complex_pair(self, tmp_path):
        out = tmp_path / "o"
        assert run_cli("simulate", "--config", "rep2d_complex", "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert [v["outcome"] for v in report["verdicts"]] == ["GlobalSmooth"]

    def test_simulate_trace(self, tmp_path):
        # bundled scenario: (m2, m3) = (2, 1) at rel_tol 1e-12; the invariant is a difference of
        # terms growing like |m|^3, so its relative drift scales with rel_tol times that growth
        out = tmp_path / "o"
        assert load_config("trace3d").initial["m0"] == [2.0, 1.0]
        assert run_cli("simulate", "--config", "trace3d", "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["invariant_drift"][0]["initial"] == pytest.approx(-2.0)
        assert report["invariant_drift"][0]["max_relative_drift"] <= 1e-6

    def test_json_format(self, tmp_path):
        out = tmp_path / "o"
        assert run_cli("simulate", "--config", "complex_pair", "--out", out, "--format", "json") == 0
        data = json.loads((out / "trajectory.json").read_text())
        assert data["columns"][0] == "t" and data["rows"]

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = write(tmp_path, dict(MINIMAL, M0=[0] * 9))
        assert run_cli("simulate", "--config", bad, "--out", tmp_path / "o") == cli.EXIT_CONFIG
        assert run_cli("simulate", "--config", tmp_path / "missing.json") == cli.EXIT_CONFIG

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        # a steep bump steepens into a shock the coarse grid cannot hold
        cfg = {"model": "ViscousDusty2D", "phi0": {"preset": "gaussian", "params": {"amplitude": 50.0}},
               "params": {"nu": 0.02, "N": 32, "L": 8, "T": 0.5}}
        code = run_cli("viscous", "--config", write(tmp_path, cfg), "--out", tmp_path / "o")
        assert code == cli.EXIT_NUMERIC
        assert "numerical failure" in capsys.readouterr().err

    def test_portrait_empty_range_rejected(self, tmp_path, capsys):
        cfg = dict(MINIMAL, sweep={"ranges": [[-2, 2], [0, 0]], "counts": [3, 3]})
        assert run_cli("portrait", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_CONFIG

    def test_classify_damping_boundary(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert run_cli("classify", "--config", "classify_damping", "--out", out, "--jobs", 1) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["boundary"]["estimate"] == pytest.approx(-1.0, abs=0.05)

    def test_classify_unsupported_model(self, tmp_path, capsys):
        cfg = dict(MINIMAL, sweep={"ranges": [[-2, 2]], "counts": [3]})
        assert run_cli("classify", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_CONFIG

    def test_viscous_zero_potential(self, tmp_path):
        out = tmp_path / "o"
        cfg = {"model": "ViscousDusty2D", "phi0": "zero", "params": {"nu": 0.05, "N": 16, "L": 4, "T": 0.2}}
        assert run_cli("viscous", "--config", write(tmp_path, cfg), "--out", out) == 0
        lines = (out / "diagnostics.csv").read_text().splitlines()[1:]
        assert lines and all(row.split(",")[1:] == ["0.0", "0.0", "0.0"] for row in lines)

    def test_invariants_listing(self, capsys):
        assert run_cli("invariants", "--n", 4) == 0
        data = json.loads(capsys.readouterr().out)
        assert [s["pairs"] for s in data["sequences"]] == [[[1, 2], [3, 4]], [[1, 3], [2, 4]]]

    def test_invariants_check(self, capsys):
        assert run_cli("invariants", "--n", 3, "--check", "[[1,2],[2,3],[3,1]]") == 0
        assert json.loads(capsys.readouterr().out)["N"] == 2
        assert run_cli("invariants", "--n", 3, "--check", "[[1,2],[2,3]]") == cli.EXIT_CHECK_FAILED

    def test_deterministic_bytes(self, tmp_path):
        blobs = []
        for i in range(2):
            out = tmp_path / f"o{i}"
            assert run_cli("portrait", "--config", "portrait_re3d", "--out", out, "--seed", 7, "--jobs", 2) == 0
            blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"})
        assert blobs[0] == blobs[1]


def test_matrix_run_reports_eigenvector_conditioning():
    from gradflow.runner import simulate

    res = simulate(load_config("re3d_matrix"))
    assert res.extra["near_defective"] is False
    assert 1.0 <= res.extra["max_eigenvector_condition"] < 1e8


def test_defective_start_is_flagged():
    from gradflow.runner import simulate

    # a Jordan block: one eigenvalue, one eigenvector
    cfg = parse_config({"model": "LinearDamping", "n": 2, "params": {"beta": 1.0},
                        "M0": [-0.5, 1.0, 0.0, -0.5], "integration": {"t_max": 1.0}})
    res = simulate(cfg)
    assert res.extra["near_defective"] is True


def test_complex_rep_run_keeps_trace_real():
    from gradflow.runner import simulate

    res = simulate(load_config("rep2d_complex"))
    assert res.extra["max_trace_imag"] <= 1e-12
