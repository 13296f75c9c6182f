"""Core state types, small dense eigenproblems and the adaptive ODE driver.

Every model in the package is integrated with :func:`integrate`, an
embedded Dormand-Prince 5(4) pair with dense output, terminal events and
finite-time blowup detection.  States may be real or complex vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

from .errors import (
    InvalidInputError,
    NumericalError,
    RHSFailureError,
    StiffnessError,
)

__all__ = [
    "Spectrum",
    "GradientTensor",
    "BlowupInfo",
    "TrajectoryRecord",
    "IntegrationOptions",
    "Event",
    "eigendecompose",
    "sort_eigenvalues",
    "charpoly_coefficients",
    "charpoly_residual",
    "eigenvector_condition",
    "track_eigenvalues",
    "integrate",
    "integrate_matrix_riccati",
]


def sort_eigenvalues(values) -> np.ndarray:
    """Sort by (real, imag) ascending; stable, so ties keep input order."""
    v = np.asarray(values, dtype=complex).ravel()
    order = np.lexsort((v.imag, v.real))
    return v[order]


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of an n x n velocity gradient (units of 1/time)."""

    values: np.ndarray
    incompressible: bool = False
    tol_sum: float = 1e-10

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).ravel()
        if v.size < 2:
            raise InvalidInputError(f"spectrum needs n >= 2 values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("spectrum has non-finite entries")
        if self.incompressible and abs(v.sum()) > self.tol_sum:
            raise InvalidInputError(
                f"incompressible spectrum has |sum| = {abs(v.sum()):.3e} > {self.tol_sum:g}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.values.imag == 0))

    def is_conjugate_closed(self, tol: float = 1e-10) -> bool:
        v = self.values
        scale = max(1.0, float(np.max(np.abs(v))))
        # conj(v) must be a permutation of v
        cost = np.abs(v[:, None] - np.conj(v)[None, :])
        rows, cols = linear_sum_assignment(cost)
        return bool(np.max(cost[rows, cols]) <= tol * scale)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class GradientTensor:
    """Real n x n velocity-gradient matrix M = grad u."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"gradient tensor must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("gradient tensor has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= tol)


def _as_matrix(M) -> np.ndarray:
    if isinstance(M, GradientTensor):
        return M.entries
    a = np.asarray(M)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def eigendecompose(M) -> Spectrum:
    """All eigenvalues of ``M`` (with multiplicity), sorted by (Re, Im)."""
    a = _as_matrix(M)
    return Spectrum(sort_eigenvalues(np.linalg.eigvals(a)))


def charpoly_coefficients(M) -> np.ndarray:
    """Coefficients ``[1, c1, ..., cn]`` of det(lambda I - M) by Faddeev-LeVerrier.

    Works from matrix products only, so it is independent of any
    eigenvalue routine.
    """
    a = np.asarray(_as_matrix(M))
    n = a.shape[0]
    dtype = np.result_type(a.dtype, float)
    coeffs = np.zeros(n + 1, dtype=dtype)
    coeffs[0] = 1.0
    Mk = np.zeros((n, n), dtype=dtype)
    eye = np.eye(n, dtype=dtype)
    for k in range(1, n + 1):
        Mk = a @ Mk + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(a @ Mk) / k
    return coeffs


def charpoly_residual(M, spectrum: Spectrum) -> float:
    """Max scaled mismatch between char-poly coefficients from M and from its spectrum."""
    a = _as_matrix(M)
    from_matrix = charpoly_coefficients(a)
    from_values = np.poly(spectrum.values)
    scale = max(1.0, float(np.linalg.norm(a, 2)))
    weights = scale ** np.arange(a.shape[0] + 1)
    return float(np.max(np.abs(from_matrix - from_values) / weights))


def eigenvector_condition(M) -> float:
    """2-norm condition number of the right-eigenvector matrix (inf if singular)."""
    _, R = np.linalg.eig(_as_matrix(M))
    with np.errstate(all="ignore"):
        c = np.linalg.cond(R)
    return float(c) if np.isfinite(c) else math.inf


def track_eigenvalues(spectra: Sequence[Sequence[complex]], ambiguity: float = 1e-9) -> np.ndarray:
    """Continue eigenvalue branches across consecutive samples.

    Each sample is matched to its predecessor by a minimum-cost assignment of
    complex-plane distances.  When two eigenvalues of a sample lie within
    ``ambiguity`` of each other the branch identity is undefined and the
    sample falls back to sorted order.
    """
    rows = [sort_eigenvalues(s) for s in spectra]
    if not rows:
        return np.zeros((0, 0), dtype=complex)
    out = np.empty((len(rows), rows[0].size), dtype=complex)
    out[0] = rows[0]
    for i in range(1, len(rows)):
        cur = rows[i]
        gaps = np.abs(cur[:, None] - cur[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.size and np.min(gaps) < ambiguity * max(1.0, float(np.max(np.abs(cur)))):
            out[i] = cur
            continue
        cost = np.abs(out[i - 1][:, None] - cur[None, :])
        r, c = linear_sum_assignment(cost)
        out[i, r] = cur[c]
    return out


# ---------------------------------------------------------------------------
# Integration


@dataclass
class BlowupInfo:
    t_star_estimate: float
    orthant: tuple
    terminal_norm: float
    threshold: float
    fit_times: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    fit_norms: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class TrajectoryRecord:
    """Time-stamped state samples plus optional blowup / event metadata."""

    times: np.ndarray
    states: np.ndarray
    blowup: Optional[BlowupInfo] = None
    events: list = field(default_factory=list)
    status: str = "completed"
    shape: Optional[tuple] = None
    n_steps: int = 0
    n_rejected: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or self.times.size != self.states.shape[0]:
            raise InvalidInputError("times and states must be aligned 1:1")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("trajectory times must be strictly increasing")
        if self.blowup is not None:
            if self.blowup.terminal_norm < self.blowup.threshold:
                raise InvalidInputError("blowup terminal norm below threshold")
            if self.blowup.t_star_estimate < self.times[-1]:
                raise InvalidInputError("blowup t* precedes the last sample")

    def __len__(self):
        return self.times.size

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def matrices(self) -> np.ndarray:
        if self.shape is None:
            raise InvalidInputError("trajectory does not carry matrix states")
        return self.states.reshape((-1,) + tuple(self.shape))

    def spectra(self, track: bool = True) -> np.ndarray:
        """Eigenvalues of each matrix sample, continued across time if ``track``."""
        mats = self.matrices()
        vals = [np.linalg.eigvals(m) for m in mats]
        if track:
            return track_eigenvalues(vals)
        return np.array([sort_eigenvalues(v) for v in vals])


@dataclass
class IntegrationOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    first_step: Optional[float] = None
    blowup_threshold: float = 1e8
    sample_count: Optional[int] = None
    t_eval: Optional[Sequence[float]] = None
    fixed_step: Optional[float] = None
    max_steps: int = 2_000_000
    fit_window: int = 10

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if not self.blowup_threshold > 0:
            raise InvalidInputError("blowup threshold must be positive")
        if self.fixed_step is not None and not self.fixed_step > 0:
            raise InvalidInputError("fixed_step must be positive")


@dataclass
class Event:
    """Scalar event function g(t, y); a sign change of g ends or marks the run."""

    func: Callable
    terminal: bool = True
    direction: int = 0
    name: str = ""

    def __call__(self, t, y):
        return float(np.real(self.func(t, y)))


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t + s h) = y + h * K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _dense(y, h, K, s):
    return y + h * (K.T @ (_P @ np.array([s, s * s, s ** 3, s ** 4])))


def _sup(y) -> float:
    return float(np.max(np.abs(y))) if y.size else 0.0


def _orthant(y) -> tuple:
    """Sign pattern of the components; near-zero ones are neutral (0)."""
    y = np.real(y)
    scale = _sup(y)
    return tuple(0 if abs(v) < 1e-3 * scale else (1 if v > 0 else -1) for v in y)


def fit_blowup_time(times, norms) -> float:
    """Root of the least-squares line through 1/||y|| versus t."""
    t = np.asarray(times, dtype=float)
    inv = 1.0 / np.asarray(norms, dtype=float)
    if t.size < 2:
        return float(t[-1])
    # center for conditioning
    tc = t - t[-1]
    slope, intercept = np.polyfit(tc, inv, 1)
    if not slope < 0:
        return float(t[-1])
    return float(max(t[-1], t[-1] - intercept / slope))


def _initial_step(rhs, t0, y0, f0, direction_span, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean(np.abs(y0 / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    with np.errstate(all="ignore"):
        f1 = rhs(t0 + h0, y0 + h0 * f0)
    if not np.all(np.isfinite(f1)):
        return h0 * 1e-3
    d2 = np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, direction_span)


def integrate(rhs: Callable, y0, t_span, opts: Optional[IntegrationOptions] = None,
              events: Sequence[Event] = ()) -> TrajectoryRecord:
    """Integrate ``y' = rhs(t, y)`` over ``t_span`` with blowup detection.

    Integration stops as soon as the sup-norm of the state exceeds
    ``opts.blowup_threshold``; the pole location is then estimated by a
    linear fit of 1/||y|| over the last ``opts.fit_window`` accepted steps.

    Raises
    ------
    RHSFailureError
        ``rhs`` returned a non-finite value at an accepted state.
    StiffnessError
        The step size underflowed without the threshold being crossed.
    """
    opts = opts or IntegrationOptions()
    t0, t1 = (float(t_span[0]), float(t_span[1]))
    if not t1 > t0:
        raise InvalidInputError(f"empty time span {t_span}")
    y = np.array(y0)
    if not np.iscomplexobj(y):
        y = y.astype(float)
    y = y.ravel()
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("initial state has non-finite entries")

    def f(t, state):
        out = np.asarray(rhs(t, state))
        return out.astype(y.dtype, copy=False).ravel() if np.iscomplexobj(y) else out.ravel()

    if opts.t_eval is not None:
        t_eval = np.asarray(opts.t_eval, dtype=float)
    elif opts.sample_count is not None:
        t_eval = np.linspace(t0, t1, int(opts.sample_count))
    else:
        t_eval = None
    if t_eval is not None:
        if np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > t1:
            raise InvalidInputError("t_eval must be increasing and inside t_span")
        t_eval = t_eval[t_eval > t0]

    rtol, atol = opts.rel_tol, opts.abs_tol
    times = [t0]
    states = [y.copy()]
    tail_t = [t0]
    tail_y = [y.copy()]
    tail_len = max(4 * opts.fit_window, 40)
    event_hits = []
    g_prev = [ev(t0, y) for ev in events]

    t = t0
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = f(t, y)
    if not np.all(np.isfinite(k1)):
        raise RHSFailureError(f"rhs returned non-finite values at t={t}")

    fixed = opts.fixed_step is not None
    if fixed:
        h = opts.fixed_step
    elif opts.first_step is not None:
        h = opts.first_step
    else:
        h = _initial_step(f, t, y, k1, t1 - t0, rtol, atol)
    h = min(h, opts.max_step)
    eval_idx = 0
    n_steps = n_rej = 0
    blowup = None
    status = "completed"
    K = np.empty((7, y.size), dtype=y.dtype)

    try:
        while t < t1:
            if n_steps >= opts.max_steps:
                raise NumericalError(f"exceeded {opts.max_steps} steps at t={t}")
            # land exactly on the next requested output time
            target = t1
            if t_eval is not None and eval_idx < t_eval.size:
                target = min(t1, t_eval[eval_idx])
            h = min(h, target - t) if not fixed else min(opts.fixed_step, t1 - t)
            tiny = 16 * np.spacing(max(abs(t), 1.0))
            if h < tiny and target - t > tiny:
                raise StiffnessError(f"step size underflow at t={t:.16g}")

            K[0] = k1
            ok = True
            with np.errstate(over="ignore", invalid="ignore"):
                for s in range(1, 7):
                    ys = y + h * (np.asarray(_A[s]) @ K[:s])
                    K[s] = f(t + _C[s] * h, ys)
                    if not np.all(np.isfinite(K[s])):
                        ok = False
                        break
                if ok:
                    y_new = y + h * (_B @ K)
                    ok = bool(np.all(np.isfinite(y_new)))
            if not ok:
                if fixed:
                    raise RHSFailureError(f"non-finite stage with fixed step at t={t}")
                n_rej += 1
                h *= 0.25
                continue

            if fixed:
                err_norm = 0.0
            else:
                err = h * (_E @ K)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err_norm = float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))
            if err_norm > 1.0:
                n_rej += 1
                h *= max(0.2, 0.9 * err_norm ** -0.2)
                continue

            t_new = t + h
            if t_eval is not None and eval_idx < t_eval.size and math.isclose(
                t_new, t_eval[eval_idx], rel_tol=0, abs_tol=4 * np.spacing(max(abs(t_new), 1.0))
            ):
                t_new = float(t_eval[eval_idx])
            n_steps += 1
            Kstep = K.copy()

            # events: sign changes over the accepted step, located on the interpolant
            stop_here = None
            for i, ev in enumerate(events):
                g_new = ev(t_new, y_new)
                g_old = g_prev[i]
                crossed = g_old * g_new < 0 or (g_new == 0 and g_old != 0)
                if crossed and (ev.direction == 0 or np.sign(g_new - g_old) == np.sign(ev.direction)):
                    def gs(sv, y_=y, h_=h, K_=Kstep, t_=t, ev_=ev):
                        return ev_(t_ + sv * h_, _dense(y_, h_, K_, sv))
                    try:
                        sroot = brentq(gs, 0.0, 1.0, xtol=1e-14)
                    except ValueError:
                        sroot = 1.0
                    hit_t = t + sroot * h
                    event_hits.append((i, hit_t, _dense(y, h, Kstep, sroot)))
                    if ev.terminal and (stop_here is None or sroot < stop_here[0]):
                        stop_here = (sroot, i)
                g_prev[i] = g_new
            if stop_here is not None:
                sroot, i = stop_here
                hit_t = t + sroot * h
                hit_y = _dense(y, h, Kstep, sroot)
                if hit_t > times[-1]:
                    times.append(hit_t)
                    states.append(hit_y)
                status = f"event:{events[i].name or i}"
                break

            t, y = t_new, y_new
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = f(t, y)
            tail_t.append(t)
            tail_y.append(y.copy())
            if len(tail_t) > tail_len:
                del tail_t[0], tail_y[0]

            record_now = t_eval is None or (eval_idx < t_eval.size and t == t_eval[eval_idx])
            if t_eval is not None and record_now:
                eval_idx += 1
            norm = _sup(y)
            if norm > opts.blowup_threshold:
                if not record_now:
                    # keep the approach to the singularity for rate fits
                    for tt, yy in zip(tail_t, tail_y):
                        if tt > times[-1]:
                            times.append(tt)
                            states.append(yy)
                else:
                    times.append(t)
                    states.append(y.copy())
                w = opts.fit_window
                ft = np.array(tail_t[-w:])
                fn = np.array([_sup(v) for v in tail_y[-w:]])
                blowup = BlowupInfo(
                    t_star_estimate=fit_blowup_time(ft, fn),
                    orthant=_orthant(y),
                    terminal_norm=norm,
                    threshold=opts.blowup_threshold,
                    fit_times=ft,
                    fit_norms=fn,
                )
                status = "blowup"
                break
            if record_now:
                times.append(t)
                states.append(y.copy())
            if not np.all(np.isfinite(k1)):
                raise RHSFailureError(f"rhs returned non-finite values at t={t}")

            if not fixed:
                factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
                h = min(h * factor, opts.max_step)
    except NumericalError as exc:
        # hand the samples accepted so far to the caller
        exc.partial = TrajectoryRecord(np.array(times), np.array(states), status="failed",
                                       n_steps=n_steps, n_rejected=n_rej)
        raise

    return TrajectoryRecord(
        times=np.array(times),
        states=np.array(states),
        blowup=blowup,
        events=event_hits,
        status=status,
        n_steps=n_steps,
        n_rejected=n_rej,
    )


def integrate_matrix_riccati(forcing: Callable, M0, t_span,
                             opts: Optional[IntegrationOptions] = None,
                             events: Sequence[Event] = ()) -> TrajectoryRecord:
    """Integrate dM/dt = -M^2 + G(M, t) along a single Lagrangian path.

    ``forcing(M, t)`` returns G as an n x n array; ``None`` means G = 0.
    """
    a = np.array(_as_matrix(M0), dtype=float)
    n = a.shape[0]

    def rhs(t, y):
        M = y.reshape(n, n)
        d = -M @ M
        if forcing is not None:
            d = d + forcing(M, t)
        return d.ravel()

    rec = integrate(rhs, a.ravel(), t_span, opts, events)
    rec.shape = (n, n)
    return rec
