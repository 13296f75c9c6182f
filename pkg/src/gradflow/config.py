"""Scenario files: JSON parsing, validation, defaults and canonical form."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, GradflowError
from .models import ModelKind, ModelSpec, parse_kind

INITIAL_BLOCKS = ("lambdas", "M0", "m0", "phi0")

INTEGRATION_DEFAULTS = {
    "t_max": 100.0,
    "rel_tol": 1e-8,
    "abs_tol": 1e-10,
    "sample_count": None,
    "blowup_threshold": 1e8,
    "drift_window": 1e2,
}

# which initial block each model accepts
ALLOWED_BLOCKS = {
    ModelKind.LINEAR_DAMPING: {"lambdas", "M0"},
    ModelKind.VISCOUS_DUSTY_2D: {"phi0"},
    ModelKind.RESTRICTED_EULER: {"lambdas", "M0"},
    ModelKind.RESTRICTED_EULER_POISSON: {"lambdas"},
    ModelKind.TRACE_DYNAMICS: {"m0"},
    ModelKind.RE3D_COMPLEX_PAIR: {"lambdas"},
    ModelKind.REP2D_GAMMA: {"lambdas"},
}

NEEDS_RHO = {ModelKind.RESTRICTED_EULER_POISSON, ModelKind.REP2D_GAMMA}


@dataclass
class ScenarioConfig:
    model: ModelSpec
    initial: dict
    integration: dict = field(default_factory=lambda: dict(INTEGRATION_DEFAULTS))
    sweep: Optional[dict] = None
    output: dict = field(default_factory=lambda: {"format": "csv", "path": None})
    seed: Optional[int] = None
    name: Optional[str] = None

    # --- accessors -------------------------------------------------------

    @property
    def kind(self) -> ModelKind:
        return self.model.kind

    def lambdas(self) -> np.ndarray:
        vals = [complex(re, im) for re, im in self.initial["lambdas"]]
        arr = np.array(vals, dtype=complex)
        return arr.real.copy() if np.all(arr.imag == 0) else arr

    def matrix(self) -> np.ndarray:
        n = self.model.n
        return np.asarray(self.initial["M0"], dtype=float).reshape(n, n)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": {"kind": self.model.kind.value, "n": self.model.n, "params": self.model.params},
            "initial": self.initial,
            "integration": self.integration,
            "sweep": self.sweep,
            "output": self.output,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _float(value, where: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number, got {value!r}", where) from None
    return out


def _complex_pair(item, where: str) -> list:
    if isinstance(item, (int, float)):
        return [float(item), 0.0]
    if not (isinstance(item, (list, tuple)) and len(item) == 2):
        raise ConfigError(f"{where} must be a [re, im] pair", where)
    return [_float(item[0], where), _float(item[1], where)]


def _normalize(raw: dict) -> dict:
    """Accept the flat shorthand {model: "RE", n: 3, lambdas: ...}."""
    d = copy.deepcopy(raw)
    model = d.pop("model", None)
    if model is None:
        raise ConfigError("missing field 'model'", "model")
    if isinstance(model, str):
        model = {"kind": model}
    if not isinstance(model, dict):
        raise ConfigError("'model' must be a string or an object", "model")
    model = dict(model)
    for key in ("n", "params"):
        if key in d:
            if key in model:
                raise ConfigError(f"'{key}' given both inside and outside 'model'", f"model.{key}")
            model[key] = d.pop(key)
    initial = dict(d.pop("initial", {}) or {})
    for key in INITIAL_BLOCKS + ("rho0",):
        if key in d:
            if key in initial:
                raise ConfigError(f"'{key}' given both inside and outside 'initial'", f"initial.{key}")
            initial[key] = d.pop(key)
    known = {"integration", "sweep", "output", "seed", "name"}
    extra = set(d) - known
    if extra:
        field_name = sorted(extra)[0]
        raise ConfigError(f"unknown field {field_name!r}", field_name)
    d["model"] = model
    d["initial"] = initial
    return d


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object", "")
    d = _normalize(raw)
    m = d["model"]
    if "kind" not in m:
        raise ConfigError("missing field 'model.kind'", "model.kind")
    try:
        kind = parse_kind(m["kind"])
    except GradflowError as exc:
        raise ConfigError(str(exc), "model.kind") from None

    initial = d["initial"]
    blocks = [b for b in INITIAL_BLOCKS if b in initial]
    if len(blocks) != 1:
        what = "none" if not blocks else ", ".join(blocks)
        raise ConfigError(f"exactly one of {', '.join(INITIAL_BLOCKS)} is required (got {what})", "initial")
    block = blocks[0]
    if block not in ALLOWED_BLOCKS[kind]:
        raise ConfigError(f"{kind.value} does not accept initial '{block}'", f"initial.{block}")
    extra = set(initial) - set(INITIAL_BLOCKS) - {"rho0"}
    if extra:
        f = sorted(extra)[0]
        raise ConfigError(f"unknown field 'initial.{f}'", f"initial.{f}")

    canon_initial: dict = {}
    n = m.get("n")
    if block == "lambdas":
        lam = initial["lambdas"]
        if not isinstance(lam, list) or not lam:
            raise ConfigError("initial.lambdas must be a non-empty list", "initial.lambdas")
        canon_initial["lambdas"] = [_complex_pair(x, f"initial.lambdas[{i}]") for i, x in enumerate(lam)]
        n = n if n is not None else len(lam)
        if len(lam) != n:
            raise ConfigError(f"initial.lambdas has {len(lam)} entries but n={n}", "initial.lambdas")
    elif block == "M0":
        M = initial["M0"]
        flat = np.asarray(M, dtype=float).ravel() if isinstance(M, list) else None
        if flat is None:
            raise ConfigError("initial.M0 must be a row-major list", "initial.M0")
        size = int(round(np.sqrt(flat.size)))
        n = n if n is not None else size
        if flat.size != n * n:
            raise ConfigError(f"initial.M0 has {flat.size} entries, expected {n * n}", "initial.M0")
        canon_initial["M0"] = [float(x) for x in flat]
    elif block == "m0":
        mv = initial["m0"]
        if not isinstance(mv, list) or not mv:
            raise ConfigError("initial.m0 must be a non-empty list", "initial.m0")
        canon_initial["m0"] = [_float(x, f"initial.m0[{i}]") for i, x in enumerate(mv)]
        n = n if n is not None else len(mv) + 1
        if len(mv) != n - 1:
            raise ConfigError(f"initial.m0 needs n-1 = {n - 1} traces", "initial.m0")
    else:
        p = initial["phi0"]
        if isinstance(p, str):
            p = {"preset": p}
        if not isinstance(p, dict) or "preset" not in p:
            raise ConfigError("initial.phi0 must name a preset", "initial.phi0")
        canon_initial["phi0"] = {"preset": str(p["preset"]), "params": dict(p.get("params", {}))}
        n = n if n is not None else 2
    if "rho0" in initial:
        if kind not in NEEDS_RHO:
            raise ConfigError(f"{kind.value} does not use rho0", "initial.rho0")
        rho0 = _float(initial["rho0"], "initial.rho0")
        if rho0 < 0:
            raise ConfigError("initial.rho0 must be non-negative", "initial.rho0")
        canon_initial["rho0"] = rho0
    elif kind in NEEDS_RHO:
        raise ConfigError(f"{kind.value} requires initial.rho0", "initial.rho0")

    params = dict(m.get("params", {}) or {})
    try:
        spec = ModelSpec(kind, n, params)
    except GradflowError as exc:
        raise ConfigError(str(exc), "model.params") from None

    integ = dict(INTEGRATION_DEFAULTS)
    for key, value in (d.get("integration") or {}).items():
        if key not in INTEGRATION_DEFAULTS:
            raise ConfigError(f"unknown field 'integration.{key}'", f"integration.{key}")
        if value is None:
            integ[key] = None
        elif key == "sample_count":
            if int(value) != value or value < 2:
                raise ConfigError("integration.sample_count must be an integer >= 2", "integration.sample_count")
            integ[key] = int(value)
        else:
            integ[key] = _float(value, f"integration.{key}")
            if not integ[key] > 0:
                raise ConfigError(f"integration.{key} must be positive", f"integration.{key}")

    sweep = d.get("sweep")
    if sweep is not None:
        sweep = _parse_sweep(sweep)

    out = {"format": "csv", "path": None}
    for key, value in (d.get("output") or {}).items():
        if key not in out:
            raise ConfigError(f"unknown field 'output.{key}'", f"output.{key}")
        out[key] = value
    if out["format"] not in ("csv", "json"):
        raise ConfigError("output.format must be csv or json", "output.format")

    seed = d.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer", "seed")
    return ScenarioConfig(spec, canon_initial, integ, sweep, out, seed, d.get("name"))


def _parse_sweep(sweep) -> dict:
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be an object", "sweep")
    ranges = sweep.get("ranges")
    if not isinstance(ranges, list) or not ranges:
        raise ConfigError("sweep.ranges must be a non-empty list of [lo, hi]", "sweep.ranges")
    canon = []
    for i, r in enumerate(ranges):
        if not (isinstance(r, list) and len(r) == 2):
            raise ConfigError(f"sweep.ranges[{i}] must be [lo, hi]", f"sweep.ranges[{i}]")
        lo, hi = _float(r[0], f"sweep.ranges[{i}]"), _float(r[1], f"sweep.ranges[{i}]")
        if not hi > lo:
            raise ConfigError(f"sweep.ranges[{i}] is empty", f"sweep.ranges[{i}]")
        canon.append([lo, hi])
    counts = sweep.get("counts", [11] * len(canon))
    if not isinstance(counts, list) or len(counts) != len(canon) or any(
        not isinstance(c, int) or c < 1 for c in counts
    ):
        raise ConfigError("sweep.counts must give a positive integer per range", "sweep.counts")
    out = {"ranges": canon, "counts": list(counts)}
    for key in ("t_max", "random", "components"):
        if key in sweep:
            out[key] = sweep[key]
    extra = set(sweep) - {"ranges", "counts", "t_max", "random", "components"}
    if extra:
        f = sorted(extra)[0]
        raise ConfigError(f"unknown field 'sweep.{f}'", f"sweep.{f}")
    if "random" in out and (not isinstance(out["random"], int) or out["random"] < 1):
        raise ConfigError("sweep.random must be a positive integer", "sweep.random")
    return out


def bundled_scenarios() -> list:
    root = resources.files("gradflow") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path) -> ScenarioConfig:
    """Load a JSON scenario from ``path`` or by bundled scenario name."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        res = resources.files("gradflow") / "scenarios" / f"{path}.json"
        if not res.is_file():
            raise ConfigError(f"no such config file or bundled scenario: {path}", "config")
        text = res.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from None
    return parse_config(raw)
