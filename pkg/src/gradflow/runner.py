"""Scenario execution: trajectories, drift tables, verdicts, sweeps.

Everything here returns plain data; file writing lives in :mod:`gradflow.cli`.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import blowup as bl
from . import invariants as inv
from . import models as md
from . import viscous2d as vd
from .config import ScenarioConfig
from .errors import ConfigError, DomainError, InvalidInputError, StepSizeError, UnsupportedDimensionError
from .models import ModelKind
from .spectral import IntegrationOptions, integrate, integrate_matrix_riccati

log = logging.getLogger(__name__)


@dataclass
class SimulationResult:
    columns: list
    rows: np.ndarray  # real table, one row per sample
    verdicts: list
    drift: list  # dicts: name, initial, max_relative_drift
    status: str
    extra: dict = field(default_factory=dict)


def integration_options(cfg: ScenarioConfig, **overrides) -> IntegrationOptions:
    i = cfg.integration
    kw = dict(rel_tol=i["rel_tol"], abs_tol=i["abs_tol"], blowup_threshold=i["blowup_threshold"],
              sample_count=i["sample_count"])
    kw.update(overrides)
    return IntegrationOptions(**kw)


def _lambda_columns(n, complex_):
    if complex_:
        return [c for i in range(1, n + 1) for c in (f"re_lambda_{i}", f"im_lambda_{i}")]
    return [f"lambda_{i}" for i in range(1, n + 1)]


def _split(values):
    v = np.asarray(values)
    if np.iscomplexobj(v):
        out = np.empty(v.shape[:-1] + (2 * v.shape[-1],))
        out[..., 0::2] = v.real
        out[..., 1::2] = v.imag
        return out
    return v


def _drift_rows(names, series, mask=None):
    """Initial value and max relative drift per invariant over the masked samples."""
    rows = []
    for name, vals in zip(names, series):
        vals = np.asarray(vals)
        if mask is not None:
            vals = vals[mask]
        init = complex(vals[0])
        rows.append({
            "name": name,
            "initial": init.real if init.imag == 0 else [init.real, init.imag],
            "max_relative_drift": inv.relative_drift(vals),
            "samples": int(vals.size),
        })
    return rows


def drift_mask(states, window: float) -> np.ndarray:
    """Samples whose sup-norm stays within ``window`` x max(1, initial sup-norm).

    Invariants built from large cancelling terms lose digits near breakdown
    for reasons unrelated to integration accuracy; the drift table covers the
    approach to breakdown up to this growth factor.
    """
    nrm = np.max(np.abs(np.asarray(states)), axis=1)
    return nrm <= window * max(1.0, float(nrm[0]))


def _as_real_if_possible(series):
    arr = np.asarray(series)
    if np.iscomplexobj(arr) and np.all(np.abs(arr.imag) <= 1e-14 * np.maximum(1.0, np.abs(arr.real))):
        return arr.real
    return arr


# ---------------------------------------------------------------------------
# simulate


def simulate(cfg: ScenarioConfig) -> SimulationResult:
    if cfg.sweep is not None:
        raise ConfigError("simulate runs a single trajectory; remove the sweep block or use portrait/classify",
                          "sweep")
    kind = cfg.kind
    handler = {
        ModelKind.RESTRICTED_EULER: _sim_re,
        ModelKind.RESTRICTED_EULER_POISSON: _sim_rep,
        ModelKind.TRACE_DYNAMICS: _sim_trace,
        ModelKind.RE3D_COMPLEX_PAIR: _sim_pair,
        ModelKind.REP2D_GAMMA: _sim_gamma,
        ModelKind.LINEAR_DAMPING: _sim_damping,
    }.get(kind)
    if handler is None:
        raise ConfigError(f"{kind.value} runs through the 'viscous' command", "model.kind")
    return handler(cfg)


def _sim_re(cfg):
    n, theta = cfg.model.n, cfg.model.theta
    t_span = (0.0, cfg.integration["t_max"])
    opts = integration_options(cfg)
    seqs = inv.build_index_sequences(n)
    names = [f"I{j + 1} {s.to_json()}" for j, s in enumerate(seqs)]
    if "M0" in cfg.initial:
        rec = integrate_matrix_riccati(md.restricted_euler_forcing if theta == 1 else
                                       (lambda M, t: theta * md.restricted_euler_forcing(M)),
                                       cfg.matrix(), t_span, opts)
        lam = rec.spectra(track=True)
        series = [[inv.eval_invariant_product(s, row) for row in lam] for s in seqs]
        cols = [f"M_{i}{j}" for i in range(1, n + 1) for j in range(1, n + 1)]
        table_state = rec.states
        extra = _defect_report(rec, n)
    else:
        extra = {}
        lam0 = cfg.lambdas()
        if np.iscomplexobj(lam0):
            rec = integrate(md.restricted_euler_system(theta), lam0, t_span, opts)
            lam = rec.states
            series = [[inv.eval_invariant_product(s, row) for row in lam] for s in seqs]
        else:
            gaps0, rank = md.sorted_gaps(lam0)
            rec = integrate(md.restricted_euler_gap_system(theta), gaps0, t_span, opts)
            lam = np.array([md.from_gaps(y)[rank] for y in rec.states])
            series = [[inv.eval_invariant_product_from_gaps(s, y[1:], rank) for y in rec.states] for s in seqs]
        cols, table_state = [], np.zeros((len(rec), 0))
    series = [_as_real_if_possible(s) for s in series]
    complex_ = np.iscomplexobj(lam)
    cols = ["t"] + cols + _lambda_columns(n, complex_) + [f"I{j + 1}" for j in range(len(seqs))]
    inv_cols = np.column_stack([np.real(s) for s in series]) if series else np.zeros((len(rec), 0))
    rows = np.column_stack([rec.times, np.real(table_state), _split(lam), inv_cols])
    drift = _drift_rows(names, series, drift_mask(lam, cfg.integration["drift_window"]))
    lam_rec = _lambda_record(rec, lam)
    verdict = bl.detect_and_classify(lam_rec, reason="restricted-euler")
    return SimulationResult(cols, rows, [verdict.to_dict()], drift, rec.status, extra)


NEAR_DEFECTIVE_COND = 1e8


def _defect_report(rec, n) -> dict:
    """Worst eigenvector conditioning along a matrix trajectory; flagged, not resolved."""
    from .spectral import eigenvector_condition

    conds = [eigenvector_condition(np.reshape(m, (n, n))) for m in rec.states]
    worst = float(max(conds))
    return {"max_eigenvector_condition": worst, "near_defective": bool(worst > NEAR_DEFECTIVE_COND)}


def _lambda_record(rec, lam):
    """Copy of ``rec`` whose states are eigenvalues (for orthant and rate fits)."""
    from .spectral import TrajectoryRecord

    return TrajectoryRecord(rec.times, np.asarray(lam), rec.blowup, rec.events, rec.status,
                            None, rec.n_steps, rec.n_rejected)


def _sim_rep(cfg):
    n, k = cfg.model.n, float(cfg.model.params["k"])
    rho0 = cfg.initial["rho0"]
    lam0 = cfg.lambdas()
    opts = integration_options(cfg)
    if np.iscomplexobj(lam0):
        gaps0, rank = md.to_gaps(lam0), np.arange(n)
    else:
        gaps0, rank = md.sorted_gaps(lam0)
    y0 = np.concatenate([[rho0], gaps0]).astype(lam0.dtype)
    rec = integrate(md.rep_gap_system(k), y0, (0.0, cfg.integration["t_max"]), opts)
    rho = np.real(rec.states[:, 0])
    lam = np.array([md.from_gaps(y[1:])[rank] for y in rec.states])
    seqs = inv.build_index_sequences(n)
    names = [f"I{j + 1} {s.to_json()} / rho^{s.N}" for j, s in enumerate(seqs)]
    series = []
    if rho0 > 0:
        for s in seqs:
            series.append(_as_real_if_possible(
                [inv.eval_invariant_product_from_gaps(s, y[2:], rank) / np.real(y[0]) ** s.N
                 for y in rec.states]))
    else:
        names = []
    complex_ = np.iscomplexobj(lam)
    cols = ["t", "rho"] + _lambda_columns(n, complex_) + [f"I{j + 1}" for j in range(len(series))]
    inv_cols = np.column_stack([np.real(s) for s in series]) if series else np.zeros((len(rec), 0))
    rows = np.column_stack([rec.times, rho, _split(lam), inv_cols])
    state = np.column_stack([rho, lam])
    lam_rec = _lambda_record(rec, state)
    verdict = bl.detect_and_classify(lam_rec, blocks=[[0], list(range(1, n + 1))],
                                     rate_components=list(range(1, n + 1)), reason="restricted-euler-poisson")
    mask = drift_mask(state, cfg.integration["drift_window"])
    extra = {}
    if complex_:
        # the density equation needs a real trace; report how far it strays
        trace = lam.sum(axis=1)
        extra["max_trace_imag"] = float(np.max(np.abs(trace.imag)))
    return SimulationResult(cols, rows, [verdict.to_dict()], _drift_rows(names, series, mask), rec.status, extra)


def _sim_trace(cfg):
    n = cfg.model.n
    m0 = np.array(cfg.initial["m0"], dtype=float)
    rec = integrate(md.trace_system(n), m0, (0.0, cfg.integration["t_max"]), integration_options(cfg))
    try:
        series = np.array([inv.eval_trace_invariants(list(m)) for m in rec.states]).T
        names = ["6 m3^2 - m2^3"] if n == 3 else ["12 m4 - 7 m2^2", "3 m3^2 - m2^3 - (3/4)(12 m4 - 7 m2^2) m2"]
    except UnsupportedDimensionError:  # no known invariants for this n
        series, names = np.zeros((0, len(rec))), []
    cols = ["t"] + [f"m{k}" for k in range(2, n + 1)] + [f"C{j + 1}" for j in range(len(names))]
    rows = np.column_stack([rec.times, rec.states] + ([series.T] if len(names) else []))
    drift = _drift_rows(names, series, drift_mask(rec.states, cfg.integration["drift_window"]))
    verdict = bl.detect_and_classify(rec, reason="trace-dynamics")
    return SimulationResult(cols, rows, [verdict.to_dict()], drift, rec.status)


def _sim_pair(cfg):
    lam0 = cfg.lambdas()
    if not np.iscomplexobj(lam0):
        raise ConfigError("RE3DComplexPair needs a conjugate pair in initial.lambdas", "initial.lambdas")
    pair = lam0[np.abs(lam0.imag) > 0]
    if pair.size != 2 or abs(pair[0] - pair[1].conjugate()) > 1e-12:
        raise ConfigError("initial.lambdas must hold one conjugate pair and a real value", "initial.lambdas")
    gamma, beta = float(pair[0].real), float(abs(pair[0].imag))
    rec = integrate(md.complex_pair_system(), [beta, gamma], (0.0, cfg.integration["t_max"]),
                    integration_options(cfg))
    series = [np.array([inv.complex_pair_invariant(b, g) for b, g in rec.states])]
    rows = np.column_stack([rec.times, rec.states, series[0]])
    verdict = bl.detect_and_classify(rec, reason="complex-pair")
    return SimulationResult(["t", "beta", "gamma", "J"], rows, [verdict.to_dict()],
                            _drift_rows(["(beta^2 + 9 gamma^2) beta"], series,
                                        drift_mask(rec.states, cfg.integration["drift_window"])),
                            rec.status)


def _sim_gamma(cfg):
    lam0 = cfg.lambdas().astype(complex)
    k = float(cfg.model.params["k"])
    rho0 = cfg.initial["rho0"]
    t_max = cfg.integration["t_max"]
    verdict = bl.classify_rep2d(lam0[0], lam0[1], rho0, k, t_max=t_max, verify=True)
    rec = bl.integrate_gamma(lam0[0], lam0[1], rho0, k, t_max)
    d0, L0 = verdict.details["d0"], verdict.details["Lambda0"]
    energy = inv.gamma_energy(rec.states[:, 0], rec.states[:, 1], d0, L0, k, rho0)
    rows = np.column_stack([rec.times, rec.states, energy])
    drift = [{"name": "indicator energy", "initial": float(energy[0]),
              "max_relative_drift": float(np.max(np.abs(energy))) / max(1.0, d0 * d0)}]
    return SimulationResult(["t", "Gamma", "dGamma", "energy"], rows, [verdict.to_dict()], drift, rec.status)


def _sim_damping(cfg):
    p = cfg.model.params
    n = cfg.model.n
    t_span = (0.0, cfg.integration["t_max"])
    opts = integration_options(cfg)
    if "C" in p:
        C = np.asarray(p["C"], dtype=float)
    else:
        C = -float(p["beta"]) * np.eye(n)
    if "M0" in cfg.initial:
        rec = integrate_matrix_riccati(md.damping_forcing(C), cfg.matrix(), t_span, opts)
        lam = rec.spectra(track=True)
        report = bl.check_damping_condition(rec, C)
        verdict = bl.detect_and_classify(_lambda_record(rec, lam), reason="linear-damping")
        cols = ["t"] + [f"M_{i}{j}" for i in range(1, n + 1) for j in range(1, n + 1)] + _lambda_columns(n, True)
        rows = np.column_stack([rec.times, rec.states, _split(lam.astype(complex))])
        extra = {**_defect_report(rec, n), "damping_condition": {
            "min_condition": report.min_condition.tolist(),
            "violated": report.violated.tolist(),
            "reliable": bool(report.reliable),
        }}
        return SimulationResult(cols, rows, [verdict.to_dict()], [], rec.status, extra)
    if "beta" not in p:
        raise ConfigError("eigenvalue input for LinearDamping needs params.beta (C = -beta I)", "model.params")
    beta = float(p["beta"])
    lam0 = cfg.lambdas()
    rec = integrate(lambda t, y: md.rhs_scalar_damping(y, beta), lam0, t_span, opts)
    verdicts = [bl.classify_damping(l, beta).to_dict() if beta > 0 else None for l in lam0]
    verdicts = [v for v in verdicts if v is not None] or [bl.detect_and_classify(rec).to_dict()]
    cols = ["t"] + _lambda_columns(n, np.iscomplexobj(rec.states))
    rows = np.column_stack([rec.times, _split(rec.states)])
    return SimulationResult(cols, rows, verdicts, [], rec.status)


# ---------------------------------------------------------------------------
# sweeps


def sweep_points(sweep: dict, seed: Optional[int]) -> np.ndarray:
    ranges = np.array(sweep["ranges"], dtype=float)
    if "random" in sweep:
        rng = np.random.default_rng(seed)
        return ranges[:, 0] + (ranges[:, 1] - ranges[:, 0]) * rng.random((sweep["random"], len(ranges)))
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(ranges, sweep["counts"])]
    return np.array(list(itertools.product(*axes)))


def _pool_map(fn, tasks, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass
class PortraitResult:
    points: list  # per start: dict(start, outcome, t_star, orthant, n_samples)
    samples: list  # per start: array (t, components...)
    component_names: list
    separatrices: dict


def _portrait_task(args):
    kind, n, theta, start, t_max, opts = args
    if kind == ModelKind.RESTRICTED_EULER:
        lam0 = np.append(start, -np.sum(start))
        gaps0, rank = md.sorted_gaps(lam0)
        rec = integrate(md.restricted_euler_gap_system(theta), gaps0, (0.0, t_max), opts)
        states = np.array([md.from_gaps(y)[rank] for y in rec.states])
        vis = states[:, : len(start)]
        verdict = bl.detect_and_classify(_lambda_record(rec, states))
    else:
        rec = integrate(md.trace_system(n), start, (0.0, t_max), opts)
        vis = rec.states
        verdict = bl.detect_and_classify(rec)
    return verdict.to_dict(), np.column_stack([rec.times, vis])


def portrait(cfg: ScenarioConfig, jobs: Optional[int] = None) -> PortraitResult:
    kind, n = cfg.kind, cfg.model.n
    if cfg.sweep is None:
        raise ConfigError("portrait needs a sweep block", "sweep")
    dims = len(cfg.sweep["ranges"])
    if kind == ModelKind.RESTRICTED_EULER and n == 3 and dims == 2:
        names = ["lambda_1", "lambda_2"]
        seps = {"lambda_1 = lambda_2": (1.0, 1.0), "lambda_1 = -2 lambda_2": (-2.0, 1.0),
                "lambda_1 = -lambda_2 / 2": (-0.5, 1.0)}
    elif kind == ModelKind.TRACE_DYNAMICS and n == 3 and dims == 2:
        names = ["m2", "m3"]
        seps = {"6 m3^2 = m2^3": "cusp"}
    elif kind == ModelKind.TRACE_DYNAMICS and n == 4 and dims == 3:
        names = ["m2", "m3", "m4"]
        seps = {}
    else:
        raise ConfigError(f"portrait supports 2D sweeps for RE n=3 and trace n=3, 3D sweeps for trace n=4 "
                          f"(got {kind.value}, n={n}, {dims} components)", "sweep.ranges")
    t_max = float(cfg.sweep.get("t_max", min(cfg.integration["t_max"], 10.0)))
    opts = integration_options(cfg, sample_count=None)
    pts = sweep_points(cfg.sweep, cfg.seed)
    tasks = [(kind, n, cfg.model.theta, p, t_max, opts) for p in pts]
    results = _pool_map(_portrait_task, tasks, jobs)
    points = []
    for p, (verdict, samp) in zip(pts, results):
        points.append({"start": p.tolist(), "n_samples": len(samp), **verdict})
    return PortraitResult(points, [r[1] for r in results], names, seps)


@dataclass
class ThresholdMap:
    param_names: list
    rows: list  # dicts with params, outcome, t_star
    boundary: dict


def _classify_task(args):
    kind, params, point, rho0, t_max = args
    if kind == ModelKind.LINEAR_DAMPING:
        return bl.classify_damping(point[0], params["beta"]).to_dict()
    l1, l2 = md.conj_pair_from_d_lambda(point[0], point[1])
    return bl.classify_rep2d(l1, l2, rho0, float(params["k"]), t_max=t_max).to_dict()


def classify(cfg: ScenarioConfig, jobs: Optional[int] = None) -> ThresholdMap:
    kind = cfg.kind
    if cfg.sweep is None:
        raise ConfigError("classify needs a sweep block", "sweep")
    dims = len(cfg.sweep["ranges"])
    if kind == ModelKind.LINEAR_DAMPING:
        if "beta" not in cfg.model.params or dims != 1:
            raise ConfigError("damping classification sweeps lambda0 with params.beta", "sweep.ranges")
        names, rho0 = ["lambda0"], None
    elif kind == ModelKind.REP2D_GAMMA:
        if dims != 2:
            raise ConfigError("REP2DGamma classification sweeps (d0, Lambda0)", "sweep.ranges")
        names, rho0 = ["d0", "Lambda0"], cfg.initial["rho0"]
    else:
        raise ConfigError(f"classify supports LinearDamping and REP2DGamma, not {kind.value}", "model.kind")
    pts = sweep_points(cfg.sweep, cfg.seed)
    t_max = cfg.integration["t_max"]
    tasks = [(kind, cfg.model.params, p, rho0, t_max) for p in pts]
    verdicts = _pool_map(_classify_task, tasks, jobs)
    rows = [{**dict(zip(names, map(float, p))), "outcome": v["outcome"], "t_star": v["t_star"]}
            for p, v in zip(pts, verdicts)]
    boundary = {}
    if kind == ModelKind.LINEAR_DAMPING and "random" not in cfg.sweep:
        boundary = damping_boundary(rows)
    return ThresholdMap(names, rows, boundary)


def damping_boundary(rows) -> dict:
    """Bracket of the breakdown / smooth transition along a sorted lambda0 sweep."""
    rows = sorted(rows, key=lambda r: r["lambda0"])
    for a, b in zip(rows, rows[1:]):
        if a["outcome"] != b["outcome"]:
            return {"lower": a["lambda0"], "upper": b["lambda0"],
                    "estimate": 0.5 * (a["lambda0"] + b["lambda0"])}
    return {}


# ---------------------------------------------------------------------------
# viscous


@dataclass
class ViscousResult:
    runs: dict  # nu -> ViscousRun
    convergence: Optional[list]
    phi0: object
    N: int
    L: float
    T: float


def viscous(cfg: ScenarioConfig, jobs: Optional[int] = None) -> ViscousResult:
    if cfg.kind != ModelKind.VISCOUS_DUSTY_2D:
        raise ConfigError("the viscous command needs model ViscousDusty2D", "model.kind")
    p = cfg.model.params
    spec = cfg.initial["phi0"]
    try:
        phi0 = vd.make_potential(spec["preset"], **spec["params"])
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"bad phi0: {exc}", "initial.phi0") from None
    N = int(p.get("N", 128))
    L = float(p.get("L", 8.0))
    T = float(p.get("T", min(cfg.integration["t_max"], 1.0)))
    n_out = int(p.get("outputs", 10))
    nus = [float(v) for v in (p["nu"] if isinstance(p["nu"], list) else [p["nu"]])]
    if len(nus) > 1 and (len(nus) < 3 or any(b >= a for a, b in zip(nus, nus[1:]))):
        raise ConfigError("a nu list must be strictly decreasing with at least 3 entries", "model.params.nu")
    outs = np.linspace(0.0, T, n_out + 1)[1:]
    cfl = float(p.get("cfl", 0.9))
    tasks = [(phi0, nu, N, L, T, outs, cfl) for nu in nus]
    runs = dict(zip(nus, _pool_map(_viscous_task, tasks, jobs)))
    conv = None
    if len(nus) > 1:
        hl_u, hl_v = vd.hopf_lax_gradient(phi0, N, L, T)
        conv = [vd.study_row(nu, r, hl_u, hl_v) for nu, r in runs.items()]
    return ViscousResult(runs, conv, phi0, N, L, T)


def _viscous_task(args):
    phi0, nu, N, L, T, outs, cfl = args
    try:
        return vd.run(vd.init_from_potential(phi0, nu, N, L), T, output_times=outs, cfl=cfl)
    except (StepSizeError, DomainError) as exc:
        return exc
