"""Right-hand sides and closed forms for the restricted-flow models.

All dynamics are along a single Lagrangian path, so every function here is a
plain ODE right-hand side or an explicit solution.  System builders
(``*_system``) return ``f(t, y)`` callables ready for
:func:`gradflow.spectral.integrate`.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BlowupError, DomainError, InvalidInputError, UnsupportedDimensionError
from .spectral import GradientTensor, Spectrum


class ModelKind(str, enum.Enum):
    LINEAR_DAMPING = "LinearDamping"
    VISCOUS_DUSTY_2D = "ViscousDusty2D"
    RESTRICTED_EULER = "RestrictedEuler"
    RESTRICTED_EULER_POISSON = "RestrictedEulerPoisson"
    TRACE_DYNAMICS = "TraceDynamics"
    RE3D_COMPLEX_PAIR = "RE3DComplexPair"
    REP2D_GAMMA = "REP2DGamma"


KIND_ALIASES = {
    "RE": ModelKind.RESTRICTED_EULER,
    "REP": ModelKind.RESTRICTED_EULER_POISSON,
    "Damping": ModelKind.LINEAR_DAMPING,
    "Viscous": ModelKind.VISCOUS_DUSTY_2D,
    "Trace": ModelKind.TRACE_DYNAMICS,
}


def parse_kind(name) -> ModelKind:
    if isinstance(name, ModelKind):
        return name
    if name in KIND_ALIASES:
        return KIND_ALIASES[name]
    try:
        return ModelKind(name)
    except ValueError:
        raise InvalidInputError(f"unknown model kind {name!r}") from None


_REQUIRED = {
    ModelKind.LINEAR_DAMPING: ({"C", "beta"}, 1),  # one of
    ModelKind.VISCOUS_DUSTY_2D: ({"nu"}, 0),
    ModelKind.RESTRICTED_EULER_POISSON: ({"k"}, 0),
    ModelKind.REP2D_GAMMA: ({"k"}, 0),
}


@dataclass
class ModelSpec:
    kind: ModelKind
    n: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        least = 1 if self.kind == ModelKind.LINEAR_DAMPING else 2
        if int(self.n) != self.n or self.n < least:
            raise InvalidInputError(f"model dimension must be an integer >= {least}, got {self.n}")
        self.n = int(self.n)
        p = self.params
        if self.kind in _REQUIRED:
            keys, any_of = _REQUIRED[self.kind]
            present = keys & set(p)
            if (any_of and not present) or (not any_of and present != keys):
                raise InvalidInputError(f"{self.kind.value} requires params {sorted(keys)}")
        theta = p.get("theta", 1.0)
        if not theta > 0:
            raise InvalidInputError("theta must be positive")
        if "beta" in p and not p["beta"] >= 0:
            raise InvalidInputError("beta must be >= 0")
        if "nu" in p:
            nus = p["nu"] if isinstance(p["nu"], (list, tuple)) else [p["nu"]]
            if not all(v > 0 for v in nus):
                raise InvalidInputError("viscosity must be positive")
        if "C" in p:
            C = np.asarray(p["C"], dtype=float)
            if C.shape != (self.n, self.n):
                raise InvalidInputError(f"C must be {self.n}x{self.n}")
        if self.kind in (ModelKind.VISCOUS_DUSTY_2D, ModelKind.REP2D_GAMMA) and self.n != 2:
            raise InvalidInputError(f"{self.kind.value} is two-dimensional")
        if self.kind == ModelKind.TRACE_DYNAMICS and self.n < 3:
            raise UnsupportedDimensionError("trace dynamics needs n >= 3")
        if self.kind == ModelKind.RE3D_COMPLEX_PAIR and self.n != 3:
            raise InvalidInputError("the complex-pair reduction is three-dimensional")

    @property
    def theta(self) -> float:
        return float(self.params.get("theta", 1.0))


@dataclass
class REPState:
    """Density and spectrum at one point of a restricted Euler-Poisson path."""

    rho: float
    lambdas: Spectrum

    def __post_init__(self):
        if not isinstance(self.lambdas, Spectrum):
            self.lambdas = Spectrum(self.lambdas)
        if not self.rho >= 0:
            raise DomainError(f"density must be non-negative, got {self.rho}")

    @property
    def n(self) -> int:
        return self.lambdas.n

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.rho], self.lambdas.values]).astype(complex)

    @classmethod
    def from_vector(cls, y) -> "REPState":
        y = np.asarray(y)
        return cls(float(np.real(y[0])), Spectrum(y[1:]))


def _values(lambdas) -> np.ndarray:
    if isinstance(lambdas, Spectrum):
        return lambdas.values
    return np.asarray(lambdas)


# ---------------------------------------------------------------------------
# restricted Euler


def rhs_restricted_euler(lambdas, theta: float = 1.0) -> np.ndarray:
    """lambda_i' = theta * (-lambda_i^2 + mean_k lambda_k^2)."""
    v = _values(lambdas)
    sq = v * v
    return theta * (-sq + sq.mean())


def restricted_euler_system(theta: float = 1.0) -> Callable:
    return lambda t, y: rhs_restricted_euler(y, theta)


def to_gaps(lambdas) -> np.ndarray:
    """(lambda_1, lambda_2 - lambda_1, ..., lambda_n - lambda_{n-1})."""
    v = _values(lambdas)
    return np.concatenate([v[:1], np.diff(v)])


def sorted_gaps(lambdas) -> tuple:
    """Gap coordinates of the ascending spectrum, plus ``rank`` with sorted[rank[i]] = lambdas[i].

    Ascending order makes every gap non-negative; the gap equations are
    multiplicative, so the signs persist and sums of gaps never cancel.
    """
    v = np.real(_values(lambdas))
    order = np.argsort(v, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return to_gaps(v[order]), rank


def from_gaps(y) -> np.ndarray:
    y = np.asarray(y)
    return y[0] + np.concatenate([np.zeros(1, dtype=y.dtype), np.cumsum(y[1:])])


def rhs_restricted_euler_gaps(y, theta: float = 1.0) -> np.ndarray:
    """Restricted Euler in gap coordinates.

    Neighbouring differences g_i = lambda_{i+1} - lambda_i obey the linear law
    g_i' = -theta (lambda_i + lambda_{i+1}) g_i, so they keep full relative
    precision even when two eigenvalues merge near breakdown.
    """
    y = np.asarray(y)
    lam = from_gaps(y)
    sq = lam * lam
    first = theta * (-sq[0] + sq.mean())
    gaps = -theta * (lam[:-1] + lam[1:]) * y[1:]
    return np.concatenate([[first], gaps])


def restricted_euler_gap_system(theta: float = 1.0) -> Callable:
    return lambda t, y: rhs_restricted_euler_gaps(y, theta)


def restricted_euler_forcing(M, t=None) -> np.ndarray:
    """Isotropic pressure-Hessian surrogate (tr M^2 / n) I."""
    M = np.asarray(M)
    n = M.shape[0]
    return (np.trace(M @ M) / n) * np.eye(n)


# ---------------------------------------------------------------------------
# restricted Euler-Poisson


def rhs_rep(state, k: float) -> np.ndarray:
    """(rho', lambda_1', ..., lambda_n') for the restricted Euler-Poisson system.

    ``state`` is a :class:`REPState` or a vector ``[rho, lambda_1, ...]``.
    """
    if isinstance(state, REPState):
        rho, lam = state.rho, state.lambdas.values
    else:
        y = np.asarray(state)
        rho, lam = y[0], y[1:]
    n = lam.size
    drho = -rho * lam.sum()
    dlam = -lam * lam + k * rho / n
    return np.concatenate([[drho], dlam])


def rep_system(k: float) -> Callable:
    return lambda t, y: rhs_rep(y, k)


def rhs_rep_gaps(y, k: float) -> np.ndarray:
    """REP with state ``[rho, lambda_1, g_1, ..., g_{n-1}]`` (see gap RE form)."""
    y = np.asarray(y)
    rho = y[0]
    lam = from_gaps(y[1:])
    n = lam.size
    drho = -rho * lam.sum()
    first = -lam[0] ** 2 + k * rho / n
    gaps = -(lam[:-1] + lam[1:]) * y[2:]
    return np.concatenate([[drho, first], gaps])


def rep_gap_system(k: float) -> Callable:
    return lambda t, y: rhs_rep_gaps(y, k)


# ---------------------------------------------------------------------------
# trace dynamics


def rhs_trace(m, n: Optional[int] = None) -> np.ndarray:
    """Derivative of (m_2, ..., m_n), m_k = tr M^k, for incompressible RE.

    m_k' = -k m_{k+1} + (k/n) m_{k-1} m_2 with m_1 = 0; the top trace
    m_{n+1} is eliminated by Cayley-Hamilton.
    """
    from .invariants import close_trace

    m = list(np.asarray(m).ravel()) if not isinstance(m, list) else list(m)
    if n is None:
        n = len(m) + 1
    if n < 3:
        raise UnsupportedDimensionError("trace dynamics is defined for n >= 3")
    if len(m) != n - 1:
        raise InvalidInputError(f"expected {n - 1} traces (m_2..m_n), got {len(m)}")
    # full[k] = m_k, with m_0 = n and m_1 = 0
    full = [n, 0.0] + m + [close_trace(m)]
    m2 = full[2]
    out = [-k * full[k + 1] + (k / n) * full[k - 1] * m2 for k in range(2, n + 1)]
    return np.array(out, dtype=float)


def trace_system(n: int) -> Callable:
    return lambda t, y: rhs_trace(y, n)


def power_sums(lambdas, kmax: int) -> np.ndarray:
    """(m_1, ..., m_kmax) with m_k = sum lambda^k."""
    v = _values(lambdas)
    return np.array([np.sum(v ** k) for k in range(1, kmax + 1)])


# ---------------------------------------------------------------------------
# 3D complex pair


def rhs_re3d_complex_pair(beta: float, gamma: float) -> tuple:
    """Real form of the 3D RE system for a conjugate pair gamma -/+ i beta."""
    return (-2.0 * beta * gamma, gamma * gamma + beta * beta / 3.0)


def complex_pair_system() -> Callable:
    def f(t, y):
        return np.array(rhs_re3d_complex_pair(y[0], y[1]))

    return f


# ---------------------------------------------------------------------------
# linear damping


def damping_closed_form(lambda0: complex, b_integral: Callable, b: Callable, t: float) -> complex:
    """lambda(t) = lambda0 b(t) / (1 + lambda0 B(t)), B = int_0^t b."""
    denom = 1.0 + lambda0 * b_integral(t)
    if abs(denom) < 1e-12:
        raise BlowupError(f"closed form is singular at t={t}", t)
    return lambda0 * b(t) / denom


def damping_blowup_time(lambda0: complex, beta: float) -> float:
    """First positive root of 1 + lambda0 (1 - e^{-beta t}) / beta, or inf."""
    lam = complex(lambda0)
    if lam.imag != 0 or lam.real >= 0:
        return math.inf
    if beta == 0:
        return -1.0 / lam.real
    x = 1.0 + beta / lam.real  # e^{-beta t} at the root
    if x <= 0:
        return math.inf
    return -math.log(x) / beta


def scalar_damping_closed_form(lambda0: complex, beta: float, t: float) -> complex:
    """Closed form for C = -beta I; beta = 0 reduces to lambda0 / (1 + lambda0 t)."""
    t_star = damping_blowup_time(lambda0, beta)
    if t >= t_star:
        raise BlowupError(f"solution blows up at t*={t_star:.16g}", t_star)
    lam = complex(lambda0)
    if beta == 0:
        return lam / (1.0 + lam * t)
    # divided through by beta e^{-beta t}: stays exact on the threshold lambda0 = -beta
    decay = math.exp(-beta * t)
    return lam * beta * decay / (beta + lam - lam * decay)


def rhs_scalar_damping(lambdas, beta: float) -> np.ndarray:
    v = _values(lambdas)
    return -v * v - beta * v


def rhs_damping_matrix(M, C) -> np.ndarray:
    """dM/dt = -M^2 + C M."""
    M = M.entries if isinstance(M, GradientTensor) else np.asarray(M)
    C = np.asarray(C)
    if C.shape != M.shape:
        raise InvalidInputError(f"C has shape {C.shape}, M has {M.shape}")
    return -M @ M + C @ M


def damping_forcing(C) -> Callable:
    C = np.asarray(C, dtype=float)
    return lambda M, t: C @ M


# ---------------------------------------------------------------------------
# 2D REP indicator function


def rep2d_gamma_rhs(Gamma: float, dGamma: float, k: float, rho0: float, Lambda0: float) -> float:
    """Gamma'' = k rho0 ln Gamma + 2 Lambda0 + k rho0.

    ``dGamma`` does not enter the second derivative; it is accepted so the
    signature mirrors the first-order system.
    """
    if not Gamma > 0:
        raise DomainError(f"indicator function must stay positive, got {Gamma}")
    return k * rho0 * math.log(Gamma) + 2.0 * Lambda0 + k * rho0


def gamma_system(k: float, rho0: float, Lambda0: float) -> Callable:
    """First-order form (Gamma, Gamma')' of the indicator ODE.

    Returns NaN outside Gamma > 0 so the integrator rejects such trial steps.
    """
    kr = k * rho0
    c = 2.0 * Lambda0 + kr

    def f(t, y):
        G = y[0]
        if not G > 0:
            return np.array([y[1], math.nan])
        return np.array([y[1], kr * math.log(G) + c])

    return f


def conj_pair_from_d_lambda(d0: float, Lambda0: float) -> tuple:
    """Roots of z^2 - d0 z + Lambda0, i.e. the spectrum with given trace and determinant."""
    disc = cmath.sqrt(d0 * d0 - 4 * Lambda0)
    return ((d0 - disc) / 2, (d0 + disc) / 2)
