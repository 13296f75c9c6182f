"""Singularity analysis, blowup classification and critical thresholds."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import BlowupError, DomainError, InvalidInputError, UnsupportedDimensionError
from .models import gamma_system
from .invariants import gamma_energy
from .spectral import (
    Event,
    IntegrationOptions,
    Spectrum,
    TrajectoryRecord,
    eigenvector_condition,
    integrate,
    track_eigenvalues,
)

log = logging.getLogger(__name__)


class Outcome(str, enum.Enum):
    GLOBAL_SMOOTH = "GlobalSmooth"
    FINITE_TIME_BREAKDOWN = "FiniteTimeBreakdown"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class BalancePair:
    omega: np.ndarray
    p: np.ndarray
    model: str
    residual: float = 0.0
    notes: dict = field(default_factory=dict)


@dataclass
class ClassificationVerdict:
    outcome: Outcome
    t_star: Optional[float] = None
    orthant: Optional[tuple] = None
    rate_exponent: Optional[float] = None
    reason: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outcome = Outcome(self.outcome)
        if (self.t_star is not None) != (self.outcome == Outcome.FINITE_TIME_BREAKDOWN):
            raise InvalidInputError("t_star is reported exactly for finite-time breakdown")

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "t_star": self.t_star,
            "orthant": list(self.orthant) if self.orthant is not None else None,
            "rate_exponent": self.rate_exponent,
            "reason": self.reason,
        }


# ---------------------------------------------------------------------------
# balance pairs


def balance_pair_re(n: int, k: int) -> BalancePair:
    """Leading blowup amplitudes omega^(k) tau^-1 for restricted Euler."""
    if n == 2:
        raise UnsupportedDimensionError("no restricted Euler balance for n = 2 (denominator n - 2)")
    if n < 3 or not 1 <= k <= n:
        raise InvalidInputError(f"need n >= 3 and 1 <= k <= n, got n={n}, k={k}")
    omega = np.full(n, 1.0 / (n - 2))
    omega[k - 1] = (1.0 - n) / (n - 2)
    p = -np.ones(n)
    resid = omega + omega ** 2 - np.mean(omega ** 2)
    assert abs(omega.sum()) < 1e-12
    return BalancePair(omega, p, "RE", float(np.max(np.abs(resid))))


def balance_pair_rep(n: int, omega0: float = 1.0) -> BalancePair:
    """Balance of the truncated system rho' = -rho sum(lambda), lambda_i' = -lambda_i^2."""
    if n < 2:
        raise InvalidInputError("need n >= 2")
    if not omega0 > 0:
        raise DomainError("the density amplitude must be positive")
    omega = np.concatenate([[omega0], -np.ones(n)])
    p = np.concatenate([[-float(n)], -np.ones(n)])
    # substitute at tau = 1 with d/dt tau^p = -p tau^(p-1)
    r0 = -omega[0] * p[0] - (-omega[0] * omega[1:].sum())
    ri = -omega[1:] * p[1:] - (-(omega[1:] ** 2))
    resid = max(abs(r0), float(np.max(np.abs(ri))))
    return BalancePair(omega, p, "REP", float(resid))


def _trace4d_residual(alpha, p):
    a2, a3, a4 = alpha
    p2, p3, p4 = p
    return [
        -p2 * a2 - (-2 * a3),
        -p3 * a3 - Fraction(3, 4) * a2 * a2,
        -p4 * a4 - (-Fraction(7, 3) * a3 * a2),
    ]


def balance_pair_trace4d() -> BalancePair:
    """Balance of the truncated 4D trace system, solved by substitution.

    m2' = -2 m3, m3' = (3/4) m2^2, m4' = -(7/3) m3 m2 with m_k = alpha_k tau^p_k.
    Power matching gives p3 = p2 - 1, p3 - 1 = 2 p2, p4 - 1 = p2 + p3; the
    amplitudes then follow from the coefficient equations.
    """
    p2 = Fraction(-2)  # from p2 - 2 = 2 p2
    p3 = p2 - 1
    p4 = p2 + p3 + 1
    # -p2 a2 = -2 a3  ->  a3 = p2 a2 / 2
    # -p3 a3 = 3/4 a2^2  ->  -p3 p2 a2 / 2 = 3/4 a2^2  ->  a2 = -2 p3 p2 / 3
    a2 = -2 * p3 * p2 / 3
    a3 = p2 * a2 / 2
    a4 = Fraction(7, 3) * a3 * a2 / p4
    alpha = (a2, a3, a4)
    resid = _trace4d_residual(alpha, (p2, p3, p4))
    sign_flipped = (-a2, -a3, a4)
    flipped_resid = _trace4d_residual(sign_flipped, (p2, p3, p4))
    log.info(
        "trace-4D balance: amplitudes %s, residual %s; sign-flipped candidate %s leaves residual %s",
        [str(a) for a in alpha], [str(r) for r in resid],
        [str(a) for a in sign_flipped], [str(r) for r in flipped_resid],
    )
    return BalancePair(
        omega=np.array([float(a) for a in alpha]),
        p=np.array([float(v) for v in (p2, p3, p4)]),
        model="Trace4D",
        residual=float(max(abs(r) for r in resid)),
        notes={
            "exact_amplitudes": alpha,
            "sign_flipped_amplitudes": sign_flipped,
            "sign_flipped_residual": tuple(flipped_resid),
        },
    )


def separatrix_re(n: int, k: int, a: float, t: float) -> Spectrum:
    """Exact restricted Euler solution through omega^(k) a: omega^(k) a / (1 - a t).

    Blows up at t* = 1/a when a > 0 and decays to the origin when a <= 0.
    For n = 3 this coincides with omega (n-2) a / (n-2 - a t).
    """
    bp = balance_pair_re(n, k)
    denom = 1.0 - a * t
    if abs(denom) < 1e-12:
        raise BlowupError(f"separatrix solution blows up at t={1.0 / a}", 1.0 / a)
    return Spectrum(bp.omega * a / denom)


# ---------------------------------------------------------------------------
# damping threshold


def classify_damping(lambda0: complex, beta: float) -> ClassificationVerdict:
    """Critical threshold for scalar damping C = -beta I."""
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    lam = complex(lambda0)
    if lam.imag != 0:
        return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason="complex-initial-eigenvalue")
    if lam.real >= -beta:
        return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason="above-damping-threshold")
    # 1 + lam (1 - e^{-beta t}) / beta = 0
    t_star = -math.log1p(beta / lam.real) / beta
    return ClassificationVerdict(
        Outcome.FINITE_TIME_BREAKDOWN, t_star=t_star, orthant=(-1,),
        rate_exponent=-1.0, reason="below-damping-threshold",
    )


# ---------------------------------------------------------------------------
# 2D restricted Euler-Poisson


def integrate_gamma(lambda10: complex, lambda20: complex, rho0: float, k: float,
                    t_max: float = 100.0, eps_gamma: float = 1e-10,
                    opts: Optional[IntegrationOptions] = None) -> TrajectoryRecord:
    """Integrate (Gamma, Gamma') from Gamma(0) = 1, Gamma'(0) = lambda10 + lambda20.

    Stops when Gamma falls to ``eps_gamma``.  A second, non-terminal event
    marks local minima of Gamma so tangential touches of zero are not stepped
    over.
    """
    d0 = float(np.real(lambda10 + lambda20))
    Lambda0 = float(np.real(lambda10 * lambda20))
    opts = opts or IntegrationOptions(rel_tol=3e-14, abs_tol=1e-15)
    collapse = Event(lambda t, y: y[0] - eps_gamma, terminal=True, direction=-1, name="collapse")
    minimum = Event(lambda t, y: y[1], terminal=False, direction=1, name="minimum")
    return integrate(gamma_system(k, rho0, Lambda0), [1.0, d0], (0.0, t_max), opts,
                     events=[collapse, minimum])


def _check_pair(lambda10: complex, lambda20: complex, tol: float = 1e-12):
    l1, l2 = complex(lambda10), complex(lambda20)
    if l1.imag == 0 and l2.imag == 0:
        return False
    if abs(l1 - l2.conjugate()) > tol * max(1.0, abs(l1)):
        raise InvalidInputError(f"{l1} and {l2} are not a conjugate pair")
    return True


def classify_rep2d(lambda10: complex, lambda20: complex, rho0: float, k: float,
                   t_max: float = 100.0, eps_gamma: float = 1e-10,
                   verify: bool = False, opts: Optional[IntegrationOptions] = None,
                   slope_horizon: Optional[float] = None) -> ClassificationVerdict:
    """Global smoothness versus breakdown for the 2D REP model.

    A conjugate-complex spectrum never breaks down: at Gamma = 0 the energy
    identity would require [Gamma']^2 = (lambda10 - lambda20)^2 < 0.  Real
    data are decided by integrating the indicator ODE up to ``t_max``; when the
    horizon is reached with Gamma still decreasing fast enough to hit zero
    within ``slope_horizon`` (default ``t_max``) the verdict is Inconclusive.
    ``verify=True`` also integrates complex data and reports min Gamma and the
    energy residual in ``details``.
    """
    if rho0 < 0:
        raise DomainError("rho0 must be non-negative")
    is_complex = _check_pair(lambda10, lambda20)
    d0 = float(np.real(lambda10 + lambda20))
    Lambda0 = float(np.real(lambda10 * lambda20))
    details = {"d0": d0, "Lambda0": Lambda0}
    if is_complex and not verify:
        return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason="complex-spectrum", details=details)

    rec = integrate_gamma(lambda10, lambda20, rho0, k, t_max, eps_gamma, opts)
    G, dG = rec.states[:, 0].real, rec.states[:, 1].real
    energy = gamma_energy(G, dG, d0, Lambda0, k, rho0)
    details.update(
        min_gamma=float(G.min()),
        energy_residual=float(np.max(np.abs(energy))),
        n_steps=rec.n_steps,
    )
    collapse_t = None
    if rec.status == "event:collapse":
        collapse_t = float(rec.times[-1])
    for idx, t_hit, y_hit in rec.events:
        if idx == 1 and y_hit[0] <= eps_gamma:
            collapse_t = t_hit if collapse_t is None else min(collapse_t, t_hit)
            break
    if is_complex:
        if collapse_t is not None:
            log.warning("indicator collapsed for complex data at t=%g (integration error?)", collapse_t)
        return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason="complex-spectrum", details=details)
    if collapse_t is not None:
        # d = Gamma'/Gamma ~ -1/(t* - t): rate exponent -1
        return ClassificationVerdict(
            Outcome.FINITE_TIME_BREAKDOWN, t_star=float(collapse_t), orthant=(-1,),
            rate_exponent=-1.0, reason="indicator-collapse", details=details,
        )
    horizon = t_max if slope_horizon is None else slope_horizon
    if dG[-1] < 0 and G[-1] / -dG[-1] < horizon:
        return ClassificationVerdict(Outcome.INCONCLUSIVE, reason="indicator-still-decreasing",
                                     details=details)
    return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason="horizon-reached", details=details)


# ---------------------------------------------------------------------------
# numerical blowup classification


def orthant_of(y, blocks: Optional[Sequence[Sequence[int]]] = None, neutral: float = 1e-3) -> tuple:
    """Sign pattern of ``y``; components below ``neutral`` x block sup-norm are 0.

    ``blocks`` groups component indices that are compared with each other
    (e.g. density and eigenvalues of an REP state); default is one block.
    """
    y = np.real(np.asarray(y))
    if blocks is None:
        blocks = [range(y.size)]
    out = [0] * y.size
    for block in blocks:
        idx = list(block)
        scale = float(np.max(np.abs(y[idx]))) if idx else 0.0
        for i in idx:
            if abs(y[i]) >= neutral * scale and y[i] != 0:
                out[i] = 1 if y[i] > 0 else -1
    return tuple(out)


def fit_rate_exponent(times, norms, t_star: float, lo: float, hi: float) -> Optional[float]:
    """Slope of log||y|| against log(t* - t) over samples with lo <= ||y|| <= hi."""
    t = np.asarray(times, dtype=float)
    nrm = np.asarray(norms, dtype=float)
    sel = (nrm >= lo) & (nrm <= hi) & (t < t_star)
    if sel.sum() < 3:
        sel = t < t_star
        idx = np.flatnonzero(sel)[-10:]
        sel = np.zeros_like(sel)
        sel[idx] = True
    if sel.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(t_star - t[sel]), np.log(nrm[sel]), 1)
    return float(slope)


def detect_and_classify(traj: TrajectoryRecord, *, blocks=None, rate_components=None,
                        t_star_analytic: Optional[float] = None,
                        invariant_drift: Optional[float] = None, drift_tol: float = 1e-6,
                        reason: str = "") -> ClassificationVerdict:
    """Classify an integrated trajectory from its blowup metadata.

    ``rate_components`` restricts the norm used for the rate fit (e.g. the
    eigenvalue slots of an REP state, whose density diverges faster).
    """
    if traj.blowup is None:
        if invariant_drift is not None and invariant_drift > drift_tol:
            return ClassificationVerdict(Outcome.INCONCLUSIVE, reason="invariant-drift",
                                         details={"invariant_drift": invariant_drift})
        return ClassificationVerdict(Outcome.GLOBAL_SMOOTH, reason=reason or "horizon-reached",
                                     details={"t_end": float(traj.times[-1])})
    b = traj.blowup
    t_star = b.t_star_estimate if t_star_analytic is None else t_star_analytic
    states = traj.states
    full_norms = np.max(np.abs(states), axis=1)
    # last sample beyond a tenth of the threshold
    cand = np.flatnonzero(full_norms > 0.1 * b.threshold)
    at = cand[-1] if cand.size else len(traj) - 1
    orthant = orthant_of(states[at], blocks)
    comp = list(range(states.shape[1])) if rate_components is None else list(rate_components)
    norms = np.max(np.abs(states[:, comp]), axis=1)
    top = float(norms[-1])
    rate = fit_rate_exponent(traj.times, norms, t_star, lo=top * 1e-6, hi=top * 1e-1)
    return ClassificationVerdict(
        Outcome.FINITE_TIME_BREAKDOWN, t_star=float(max(t_star, traj.times[-1])),
        orthant=orthant, rate_exponent=rate, reason=reason or "norm-threshold",
        details={"terminal_norm": b.terminal_norm, "fit_t_star": b.t_star_estimate},
    )


# ---------------------------------------------------------------------------
# damping condition along matrix trajectories


@dataclass
class DampingConditionReport:
    times: np.ndarray
    lambda0: np.ndarray
    coupling: np.ndarray  # c(t) = l C r per eigenvalue branch
    b: np.ndarray
    int_b: np.ndarray
    condition: np.ndarray  # Re(lambda0 * int_0^t b)
    imag_part: np.ndarray  # Im(lambda0 * b)
    min_condition: np.ndarray
    violated: np.ndarray
    reliable: bool
    max_eigvec_condition: float


def _left_right_coupling(M, C):
    w, R = np.linalg.eig(M)
    L = np.linalg.inv(R)  # rows: left eigenvectors with l r = 1
    return w, np.diag(L @ C @ R)


def check_damping_condition(traj: TrajectoryRecord, C, tol: float = 1e-6,
                            cond_limit: float = 1e8) -> DampingConditionReport:
    """Evaluate the bounded-solution condition Re(lambda0 int b) > -1 a posteriori."""
    mats = traj.matrices()
    C = np.asarray(C, dtype=float)
    raw_w, raw_c, conds = [], [], []
    for M in mats:
        w, c = _left_right_coupling(M, C)
        raw_w.append(w)
        raw_c.append(c)
        conds.append(eigenvector_condition(M))
    tracked = track_eigenvalues(raw_w)
    n = mats.shape[1]
    coupling = np.empty((len(mats), n), dtype=complex)
    for s, (w, c) in enumerate(zip(raw_w, raw_c)):
        # permutation that maps raw eigenvalues onto the tracked branches
        cost = np.abs(tracked[s][:, None] - w[None, :])
        perm = np.argmin(cost, axis=1)
        if len(set(perm)) != n:
            from scipy.optimize import linear_sum_assignment
            _, perm = linear_sum_assignment(cost)
        coupling[s] = c[perm]
    t = traj.times
    int_c = cumulative_trapezoid(coupling, t, axis=0, initial=0)
    b = np.exp(int_c)
    int_b = cumulative_trapezoid(b, t, axis=0, initial=0)
    lam0 = tracked[0]
    cond = np.real(lam0 * int_b)
    imag = np.imag(lam0 * b)
    min_cond = cond.min(axis=0)
    real_branch = np.all(np.abs(imag) <= 1e-12 * np.maximum(1.0, np.abs(lam0 * b)), axis=0)
    violated = real_branch & (min_cond <= -1.0 + tol)
    if traj.blowup is not None:
        violated = violated | (real_branch & (min_cond < -0.5))
    max_cond = float(max(conds))
    return DampingConditionReport(
        times=t, lambda0=lam0, coupling=coupling, b=b, int_b=int_b, condition=cond,
        imag_part=imag, min_condition=min_cond, violated=violated,
        reliable=max_cond <= cond_limit, max_eigvec_condition=max_cond,
    )
