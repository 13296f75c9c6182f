"""Irrotational viscous dusty medium on a periodic grid.

The velocity u = grad(phi) obeys u_t + grad(|u|^2 / 2) = nu * Laplace(u).
Spatial operators are centered differences and the 5-point Laplacian; all of
them commute, so a discrete gradient stays a discrete gradient and the
discrete curl stays at rounding level.  Arrays are indexed [ix, iy].
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, StepSizeError

log = logging.getLogger(__name__)

TOL_ROT = 1e-6


# ---------------------------------------------------------------------------
# initial potentials


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float = 0.1
    sigma: float = 0.5
    center: tuple = (4.0, 4.0)

    def __call__(self, x, y):
        cx, cy = self.center
        r2 = (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2
        return self.amplitude * np.exp(-r2 / (2 * self.sigma ** 2))


@dataclass(frozen=True)
class SineWave:
    amplitude: float = 1.0
    wavelength: float = 1.0

    def __call__(self, x, y):
        return self.amplitude * np.sin(2 * np.pi * np.asarray(x) / self.wavelength) + 0 * np.asarray(y)


@dataclass(frozen=True)
class Quadratic:
    """phi = a (x^2 + y^2) / 2 about ``center``."""

    a: float = 1.0
    center: tuple = (0.0, 0.0)

    def __call__(self, x, y):
        cx, cy = self.center
        return 0.5 * self.a * ((np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2)


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    def __call__(self, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.value))


PRESETS = {"gaussian": GaussianBump, "sine": SineWave, "quadratic": Quadratic,
           "constant": Constant, "zero": Constant}


def make_potential(name: str, **params):
    try:
        cls = PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown potential preset {name!r}; known: {sorted(PRESETS)}") from None
    if "center" in params:
        params["center"] = tuple(params["center"])
    return cls(**params)


# ---------------------------------------------------------------------------
# fields


@dataclass
class Grid2DField:
    u: np.ndarray
    v: np.ndarray
    h: float
    nu: float
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape or self.u.ndim != 2 or self.u.shape[0] != self.u.shape[1]:
            raise InvalidInputError("u and v must be equal N x N arrays")
        if not self.nu > 0:
            raise InvalidInputError("viscosity must be positive")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise DomainError("field has non-finite entries")

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def L(self) -> float:
        return self.N * self.h

    def coords(self):
        x = np.arange(self.N) * self.h
        return np.meshgrid(x, x, indexing="ij")


@dataclass
class EigenField:
    lam1: np.ndarray
    lam2: np.ndarray

    def __post_init__(self):
        if np.any(self.lam1 > self.lam2):
            raise InvalidInputError("lam1 must not exceed lam2")


def dx(f, h):
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * h)


def dy(f, h):
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * h)


def laplacian(f, h):
    return (np.roll(f, -1, 0) + np.roll(f, 1, 0) + np.roll(f, -1, 1) + np.roll(f, 1, 1) - 4 * f) / (h * h)


def grid_coords(N: int, L: float):
    x = np.arange(N) * (L / N)
    return np.meshgrid(x, x, indexing="ij")


def init_from_potential(phi0, nu: float, N: int, L: float) -> Grid2DField:
    """u = D_x phi0, v = D_y phi0 with centered differences.

    ``phi0`` is a callable phi0(x, y) evaluated on the grid or an N x N array.
    """
    h = L / N
    if callable(phi0):
        X, Y = grid_coords(N, L)
        phi = np.asarray(phi0(X, Y), dtype=float)
    else:
        phi = np.asarray(phi0, dtype=float)
        if phi.shape != (N, N):
            raise InvalidInputError(f"potential array has shape {phi.shape}, expected {(N, N)}")
    return Grid2DField(dx(phi, h), dy(phi, h), h, nu)


def vorticity(field: Grid2DField) -> np.ndarray:
    return dx(field.v, field.h) - dy(field.u, field.h)


def stable_dt(field: Grid2DField) -> float:
    """Largest dt allowed by dt <= min(h^2 / (4 nu), h / (4 ||u||_inf))."""
    h = field.h
    speed = max(float(np.max(np.abs(field.u))), float(np.max(np.abs(field.v))))
    bound = h * h / (4 * field.nu)
    if speed > 0:
        bound = min(bound, h / (4 * speed))
    return bound


def _tendency(u, v, h, nu):
    q = 0.5 * (u * u + v * v)
    return -dx(q, h) + nu * laplacian(u, h), -dy(q, h) + nu * laplacian(v, h)


def step(field: Grid2DField, dt: float, enforce_cfl: bool = True) -> Grid2DField:
    """One strong-stability-preserving RK3 step of the conservative form."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if enforce_cfl:
        bound = stable_dt(field)
        if dt > bound * (1 + 1e-12):
            raise StepSizeError(
                f"dt={dt:.6g} exceeds the stability bound min(h^2/(4 nu), h/(4 |u|_inf)) = {bound:.6g}"
            )
    h, nu = field.h, field.nu
    u0, v0 = field.u, field.v
    with np.errstate(over="ignore", invalid="ignore"):
        a, b = _tendency(u0, v0, h, nu)
        u1, v1 = u0 + dt * a, v0 + dt * b
        a, b = _tendency(u1, v1, h, nu)
        u2, v2 = 0.75 * u0 + 0.25 * (u1 + dt * a), 0.75 * v0 + 0.25 * (v1 + dt * b)
        a, b = _tendency(u2, v2, h, nu)
        u3 = u0 / 3 + 2 / 3 * (u2 + dt * a)
        v3 = v0 / 3 + 2 / 3 * (v2 + dt * b)
    if not (np.all(np.isfinite(u3)) and np.all(np.isfinite(v3))):
        raise StepSizeError(f"non-finite field after step at t={field.t + dt:.6g}")
    return Grid2DField(u3, v3, h, nu, field.t + dt)


def eigen_field(field: Grid2DField, tol_rot: float = TOL_ROT) -> EigenField:
    """Pointwise eigenvalues of the symmetrized 2 x 2 velocity gradient."""
    h = field.h
    ux, uy = dx(field.u, h), dy(field.u, h)
    vx, vy = dx(field.v, h), dy(field.v, h)
    rot = float(np.max(np.abs(vx - uy)))
    if rot > tol_rot:
        raise DomainError(f"vorticity {rot:.3g} exceeds {tol_rot:g}; eigenvalues may be complex")
    s = ux + vy
    g = np.sqrt((ux - vy) ** 2 + (uy + vx) ** 2)
    return EigenField(0.5 * (s - g), 0.5 * (s + g))


def l1_gap(ef: EigenField, h: float) -> float:
    return float(h * h * np.sum(ef.lam2 - ef.lam1))


def hessian_gap_integral(phi, h: float) -> float:
    """h^2 * sum sqrt((Lap phi)^2 - 4 J(phi)) with J = phi_xx phi_yy - phi_xy^2.

    Second derivatives are compositions of the centered first differences,
    so for u = grad(phi) this equals ``l1_gap`` up to rounding.
    """
    px, py = dx(phi, h), dy(phi, h)
    pxx, pyy, pxy = dx(px, h), dy(py, h), 0.5 * (dy(px, h) + dx(py, h))
    lap = pxx + pyy
    J = pxx * pyy - pxy * pxy
    return float(h * h * np.sum(np.sqrt(np.maximum(lap * lap - 4 * J, 0.0))))


# ---------------------------------------------------------------------------
# runs


@dataclass
class ViscousRun:
    final: Grid2DField
    times: np.ndarray
    l1_gap: np.ndarray
    max_lam2: np.ndarray
    vorticity: np.ndarray
    n_steps: int

    def diagnostics_rows(self):
        return [
            {"t": float(t), "l1_gap": float(g), "max_lam2": float(m), "vorticity": float(w)}
            for t, g, m, w in zip(self.times, self.l1_gap, self.max_lam2, self.vorticity)
        ]


def run(field: Grid2DField, T: float, output_times: Optional[Sequence[float]] = None,
        cfl: float = 0.9, tol_rot: float = TOL_ROT) -> ViscousRun:
    """Advance to ``T`` with dt = cfl x stability bound, landing on output times."""
    if not 0 < cfl <= 1:
        raise InvalidInputError("cfl must lie in (0, 1]")
    outs = np.asarray(output_times if output_times is not None else [T], dtype=float)
    outs = np.unique(np.append(outs[(outs > field.t) & (outs <= T)], T))
    times, gaps, lmax, rots = [], [], [], []

    def record(f):
        ef = eigen_field(f, tol_rot)
        times.append(f.t)
        gaps.append(l1_gap(ef, f.h))
        lmax.append(float(np.max(ef.lam2)))
        rots.append(float(np.max(np.abs(vorticity(f)))))

    record(field)
    n = 0
    for target in outs:
        while field.t < target:
            remaining = target - field.t
            dt = min(cfl * stable_dt(field), remaining)
            if remaining - dt < 1e-12 * max(1.0, target):
                dt = remaining
            field = step(field, dt)
            if abs(field.t - target) < 1e-12 * max(1.0, target):
                field.t = float(target)
            n += 1
        record(field)
    return ViscousRun(field, np.array(times), np.array(gaps), np.array(lmax), np.array(rots), n)


# ---------------------------------------------------------------------------
# Hopf-Lax oracle

_GOLD = (math.sqrt(5) - 1) / 2


def _golden(f, a, b, tol):
    """Vectorized golden-section minimization on brackets [a, b]."""
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    while np.max(b - a) > tol:
        c = b - _GOLD * (b - a)
        d = a + _GOLD * (b - a)
        left = f(c) < f(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return 0.5 * (a + b)


def _hl_minimize(phi0, x, y, t, cand_x, cand_y, h, tol, sweeps):
    """Best grid candidate, then alternating golden-section refinement."""
    cost = ((x[..., None] - cand_x) ** 2 + (y[..., None] - cand_y) ** 2) / (2 * t) + phi0(cand_x, cand_y)
    best = np.argmin(cost, axis=-1)
    yx = np.take_along_axis(np.broadcast_to(cand_x, cost.shape), best[..., None], -1)[..., 0]
    yy = np.take_along_axis(np.broadcast_to(cand_y, cost.shape), best[..., None], -1)[..., 0]
    for _ in range(sweeps):
        old_x, old_y = yx, yy
        yx = _golden(lambda s: ((x - s) ** 2 + (y - yy) ** 2) / (2 * t) + phi0(s, yy),
                     yx - h, yx + h, tol)
        yy = _golden(lambda s: ((x - yx) ** 2 + (y - s) ** 2) / (2 * t) + phi0(yx, s),
                     yy - h, yy + h, tol)
        if max(np.max(np.abs(yx - old_x)), np.max(np.abs(yy - old_y))) < tol:
            break
    val = ((x - yx) ** 2 + (y - yy) ** 2) / (2 * t) + phi0(yx, yy)
    return val, yx, yy


def hopf_lax(phi0: Callable, x, t: float, search_radius: float = 4.0, h: float = 0.05,
             tol: float = 1e-10, sweeps: int = 60) -> float:
    """min_y |x - y|^2 / (2t) + phi0(y): node search on a square around x, then refinement."""
    if not t > 0:
        raise InvalidInputError("Hopf-Lax needs t > 0")
    x0, y0 = float(x[0]), float(x[1])
    offs = np.arange(-search_radius, search_radius + h / 2, h)
    CX, CY = np.meshgrid(x0 + offs, y0 + offs, indexing="ij")
    val, _, _ = _hl_minimize(phi0, np.array(x0), np.array(y0), t, CX.ravel(), CY.ravel(), h, tol, sweeps)
    return float(val)


def hopf_lax_field(phi0: Callable, N: int, L: float, t: float, window: Optional[int] = None,
                   tol: float = 1e-10, sweeps: int = 60, chunk: int = 4096):
    """Hopf-Lax values on all grid nodes.

    Candidates are grid nodes within ``window`` cells of each node (default:
    enough to cover a displacement of t x max|grad phi0| + 2 cells).
    Returns (phi, minimizer_x, minimizer_y).
    """
    if not t > 0:
        raise InvalidInputError("Hopf-Lax needs t > 0")
    h = L / N
    X, Y = grid_coords(N, L)
    if window is None:
        g = init_from_potential(phi0, 1.0, N, L)
        speed = float(np.max(np.hypot(g.u, g.v)))
        window = int(math.ceil(t * speed / h)) + 2
    offs = np.arange(-window, window + 1) * h
    OX, OY = np.meshgrid(offs, offs, indexing="ij")
    OX, OY = OX.ravel(), OY.ravel()
    xs, ys = X.ravel(), Y.ravel()
    phi = np.empty_like(xs)
    mx = np.empty_like(xs)
    my = np.empty_like(xs)
    for s in range(0, xs.size, chunk):
        sl = slice(s, s + chunk)
        cx = xs[sl, None] + OX
        cy = ys[sl, None] + OY
        phi[sl], mx[sl], my[sl] = _hl_minimize(phi0, xs[sl], ys[sl], t, cx, cy, h, tol, sweeps)
    edge = np.maximum(np.abs(mx - xs), np.abs(my - ys)) > (window - 0.5) * h
    if edge.any():
        log.warning("%d Hopf-Lax minimizers sit at the search-window edge", int(edge.sum()))
    return phi.reshape(N, N), mx.reshape(N, N), my.reshape(N, N)


# ---------------------------------------------------------------------------
# vanishing viscosity


@dataclass
class StudyRow:
    nu: float
    error: Optional[float]
    status: str
    n_steps: int = 0


def _l1_distance(field: Grid2DField, hl_u, hl_v) -> float:
    h = field.h
    return float(h * h * np.sum(np.abs(field.u - hl_u) + np.abs(field.v - hl_v)))


def hopf_lax_gradient(phi0: Callable, N: int, L: float, T: float):
    """Centered-difference gradient of the Hopf-Lax field at time T."""
    h = L / N
    hl, _, _ = hopf_lax_field(phi0, N, L, T)
    return dx(hl, h), dy(hl, h)


def study_row(nu: float, outcome, hl_u, hl_v) -> StudyRow:
    """Row for one viscosity; ``outcome`` is a ViscousRun or the exception that stopped it."""
    if isinstance(outcome, Exception):
        return StudyRow(nu, None, f"failed: {outcome}")
    return StudyRow(nu, _l1_distance(outcome.final, hl_u, hl_v), "ok", outcome.n_steps)


def _study_one(args):
    phi0, nu, T, N, L, hl_u, hl_v, cfl = args
    try:
        res = run(init_from_potential(phi0, nu, N, L), T, cfl=cfl)
    except (StepSizeError, DomainError) as exc:
        log.warning("run with nu=%g failed: %s", nu, exc)
        res = exc
    return study_row(nu, res, hl_u, hl_v)


def vanishing_viscosity_study(phi0: Callable, nu_list: Sequence[float], T: float, N: int,
                              L: float, cfl: float = 0.9, jobs: int = 1) -> list:
    """L1 distance between u^nu(T) and the discrete gradient of the Hopf-Lax field, per nu."""
    nus = [float(v) for v in nu_list]
    if len(nus) < 3 or any(b >= a for a, b in zip(nus, nus[1:])):
        raise InvalidInputError("nu_list must be strictly decreasing with at least 3 entries")
    hl_u, hl_v = hopf_lax_gradient(phi0, N, L, T)
    tasks = [(phi0, nu, T, N, L, hl_u, hl_v, cfl) for nu in nus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_study_one, tasks))
    return [_study_one(a) for a in tasks]


def errors_decreasing(rows: Sequence[StudyRow], last_pair_slack: float = 0.0) -> bool:
    """Errors strictly decrease as nu decreases; the final pair may use a relative slack."""
    errs = [r.error for r in rows]
    if any(e is None for e in errs):
        return False
    for i, (a, b) in enumerate(zip(errs, errs[1:])):
        slack = last_pair_slack if i == len(errs) - 2 else 0.0
        if not b < a * (1 + slack):
            return False
    return True


# ---------------------------------------------------------------------------
# export


def write_field_csv(field: Grid2DField, path, ef: Optional[EigenField] = None) -> None:
    ef = ef or eigen_field(field)
    X, Y = field.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u", "v", "lam1", "lam2"])
        for row in zip(X.ravel(), Y.ravel(), field.u.ravel(), field.v.ravel(),
                       ef.lam1.ravel(), ef.lam2.ravel()):
            w.writerow([repr(float(c)) for c in row])


def field_metadata(field: Grid2DField, diagnostics: Optional[dict] = None) -> dict:
    return {"t": field.t, "nu": field.nu, "N": field.N, "L": field.L, "diagnostics": diagnostics or {}}


def write_field_json(field: Grid2DField, path, diagnostics: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        json.dump(field_metadata(field, diagnostics), fh, indent=2, sort_keys=True)
