"""Command-line front end: ``gradflow {simulate,portrait,classify,viscous,invariants}``.

Exit codes: 0 success, 1 failed sequence check, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import invariants as inv
from . import plotting
from . import runner
from .config import ScenarioConfig, bundled_scenarios, load_config
from .errors import ConfigError, GradflowError, NumericalError
from .viscous2d import eigen_field, errors_decreasing, write_field_csv, write_field_json

log = logging.getLogger("gradflow")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# output helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def write_table(path: Path, columns, rows, fmt: str) -> Path:
    """Rows as CSV (header + round-trip floats) or as a JSON object of columns."""
    path = path.parent / f"{path.name}.{fmt}"
    if fmt == "json":
        data = {"columns": list(columns), "rows": [[_json_value(v) for v in r] for r in rows]}
        path.write_text(json.dumps(data, indent=1) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    return path


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_value) + "\n")
    return path


def _write_timing(out: Path, command: str, start: float) -> None:
    # kept apart from the report so result files stay byte-reproducible
    write_json(out / "timing.json", {"command": command, "wall_time_s": time.perf_counter() - start})


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.format is not None:
        cfg.output["format"] = args.format
    return cfg


def _out_dir(cfg: ScenarioConfig, args) -> Path:
    out = Path(args.out or cfg.output.get("path") or "gradflow-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_base(cfg: ScenarioConfig, command: str) -> dict:
    return {
        "command": command,
        "scenario": cfg.to_dict(),
        "digest": cfg.digest(),
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ScenarioConfig, out: Path, jobs=None) -> dict:
    if cfg.kind.value == "ViscousDusty2D":
        return cmd_viscous(cfg, out, jobs)
    fmt = cfg.output["format"]
    try:
        res = runner.simulate(cfg)
    except NumericalError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            cols = ["t"] + [f"y{j + 1}" for j in range(partial.states.shape[1])]
            rows = np.column_stack([partial.times, np.real(partial.states)])
            write_table(out / "partial_trajectory", cols, rows, fmt)
        raise
    traj = write_table(out / "trajectory", res.columns, res.rows, fmt)
    fig = out / "trajectory.png"
    plotting.plot_trajectory(res.columns, res.rows, fig, title=cfg.name or cfg.kind.value)
    report = _report_base(cfg, "simulate")
    report.update({
        "status": res.status,
        "verdicts": res.verdicts,
        "invariant_drift": res.drift,
        "files": {"trajectory": traj.name, "figure": fig.name},
        **res.extra,
    })
    write_json(out / "report.json", report)
    return report


def cmd_portrait(cfg: ScenarioConfig, out: Path, jobs=None) -> dict:
    res = runner.portrait(cfg, jobs)
    fmt = cfg.output["format"]
    names = res.component_names
    pcols = ["point"] + [f"start_{c}" for c in names] + ["n_samples", "outcome", "t_star", "orthant"]
    prow = [[i, *p["start"], p["n_samples"], p["outcome"], p["t_star"],
             " ".join(str(s) for s in p["orthant"]) if p["orthant"] else ""]
            for i, p in enumerate(res.points)]
    points = write_table(out / "portrait_points", pcols, prow, fmt)
    srows = [[i, *s] for i, samp in enumerate(res.samples) for s in samp]
    samples = write_table(out / "portrait_samples", ["point", "t"] + names, srows, fmt)
    fig = out / "portrait.png"
    plotting.plot_portrait(res, fig, title=cfg.name or cfg.kind.value)
    report = _report_base(cfg, "portrait")
    counts = {}
    for p in res.points:
        counts[p["outcome"]] = counts.get(p["outcome"], 0) + 1
    report.update({
        "outcome_counts": counts,
        "separatrices": sorted(res.separatrices),
        "files": {"points": points.name, "samples": samples.name, "figure": fig.name},
    })
    write_json(out / "report.json", report)
    return report


def cmd_classify(cfg: ScenarioConfig, out: Path, jobs=None) -> dict:
    tmap = runner.classify(cfg, jobs)
    cols = tmap.param_names + ["outcome", "t_star"]
    rows = [[r[c] for c in cols] for r in tmap.rows]
    table = write_table(out / "threshold_map", cols, rows, cfg.output["format"])
    fig = out / "threshold_map.png"
    plotting.plot_threshold_map(tmap, fig, title=cfg.name or cfg.kind.value)
    report = _report_base(cfg, "classify")
    report.update({"boundary": tmap.boundary, "files": {"map": table.name, "figure": fig.name}})
    write_json(out / "report.json", report)
    return report


def cmd_viscous(cfg: ScenarioConfig, out: Path, jobs=None) -> dict:
    res = runner.viscous(cfg, jobs)
    fmt = cfg.output["format"]
    files = {}
    failed = {nu: str(r) for nu, r in res.runs.items() if isinstance(r, Exception)}
    single = len(res.runs) == 1
    if single and failed:
        (exc,) = res.runs.values()
        raise exc if isinstance(exc, NumericalError) else NumericalError(str(exc))
    for nu, run in res.runs.items():
        if isinstance(run, Exception):
            continue
        tag = "" if single else f"_nu{nu:g}"
        cols = ["t", "l1_gap", "max_lam2", "vorticity"]
        rows = np.column_stack([run.times, run.l1_gap, run.max_lam2, run.vorticity])
        files[f"diagnostics{tag}"] = write_table(out / f"diagnostics{tag}", cols, rows, fmt).name
        ef = eigen_field(run.final)
        write_field_csv(run.final, out / f"field{tag}.csv", ef)
        write_field_json(run.final, out / f"field{tag}.json",
                         {"l1_gap": float(run.l1_gap[-1]), "max_lam2": float(run.max_lam2[-1]),
                          "vorticity": float(run.vorticity[-1]), "n_steps": run.n_steps})
        files[f"field{tag}"] = f"field{tag}.csv"
    report = _report_base(cfg, "viscous")
    if failed:
        report["failed_runs"] = failed
    if res.convergence is not None:
        rows = [[r.nu, r.error, r.status, r.n_steps] for r in res.convergence]
        files["convergence"] = write_table(out / "convergence", ["nu", "l1_error", "status", "n_steps"],
                                           rows, fmt).name
        report["convergence"] = {
            "rows": [{"nu": r.nu, "l1_error": r.error, "status": r.status} for r in res.convergence],
            "strictly_decreasing": errors_decreasing(res.convergence),
        }
    fig = out / "viscous.png"
    plotting.plot_viscous(res, fig)
    files["figure"] = fig.name
    report["files"] = files
    write_json(out / "report.json", report)
    return report


def cmd_invariants(n: int, check=None) -> tuple:
    """Printable listing of the constructed sequences, or a check of a user sequence."""
    if check is not None:
        try:
            pairs = [tuple(p) for p in json.loads(check)]
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"--check expects a JSON list of [i, j] pairs ({exc})", "check") from None
        N = inv.pair_sum_multiplier(pairs, n)
        result = {"n": n, "pairs": [list(p) for p in pairs], "valid": N is not None, "N": N}
        return result, EXIT_OK if N is not None else EXIT_CHECK_FAILED
    seqs = inv.build_index_sequences(n)
    return {"n": n, "sequences": [{"pairs": [list(p) for p in s.pairs], "N": s.N} for s in seqs]}, EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradflow", description="Spectral dynamics of velocity gradients.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "integrate one scenario and report invariants and verdicts"),
        ("portrait", "phase-portrait sweep"),
        ("classify", "critical-threshold map"),
        ("viscous", "2D viscous solver and vanishing-viscosity study"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True,
                       help="JSON scenario file or bundled scenario name (see 'gradflow list')")
        p.add_argument("--out", help="output directory (default: output.path or ./gradflow-out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
        p.add_argument("--format", choices=("csv", "json"))
    p = sub.add_parser("invariants", help="list pair sequences or check one")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--check", help='JSON list of pairs, e.g. "[[1,2],[2,3],[3,1]]"')
    sub.add_parser("list", help="names of bundled scenarios")
    return parser


COMMANDS = {"simulate": cmd_simulate, "portrait": cmd_portrait, "classify": cmd_classify,
            "viscous": cmd_viscous}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            print("\n".join(bundled_scenarios()))
            return EXIT_OK
        if args.command == "invariants":
            result, code = cmd_invariants(args.n, args.check)
            print(json.dumps(result, indent=2))
            return code
        start = time.perf_counter()
        cfg = _apply_overrides(load_config(args.config), args)
        out = _out_dir(cfg, args)
        report = COMMANDS[args.command](cfg, out, args.jobs)
        _write_timing(out, args.command, start)
        print(json.dumps({k: report[k] for k in report if k not in ("scenario",)}, indent=2,
                         default=_json_value))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GradflowError as exc:
        if isinstance(exc, ValueError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
