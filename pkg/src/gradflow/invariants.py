"""Pair-sequence invariants, trace closure and power-sum recursions.

An index-pair sequence is a list of pairs (i, j), i != j, 1-based, such that
sum over pairs of (lambda_i + lambda_j) equals N * sum_k lambda_k for every
lambda.  Along restricted Euler paths the product of (lambda_i - lambda_j)
over such a sequence is conserved; along restricted Euler-Poisson paths the
product divided by rho**N is.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, UnsupportedDimensionError
from .spectral import Spectrum


@dataclass(frozen=True)
class IndexPairSequence:
    pairs: tuple
    N: int

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        if not pairs:
            raise InvalidInputError("pair sequence is empty")
        if any(i == j for i, j in pairs):
            raise InvalidInputError("pairs must join different indices")
        if any(i < 1 or j < 1 for i, j in pairs):
            raise InvalidInputError("indices are 1-based")
        object.__setattr__(self, "pairs", pairs)

    @property
    def max_index(self) -> int:
        return max(max(p) for p in self.pairs)

    def to_json(self) -> str:
        return json.dumps([list(p) for p in self.pairs])

    @classmethod
    def from_json(cls, text: str, n: int) -> "IndexPairSequence":
        pairs = [tuple(p) for p in json.loads(text)]
        N = pair_sum_multiplier(pairs, n)
        if N is None:
            raise InvalidInputError(f"{text} does not satisfy the pair-sum identity for n={n}")
        return cls(tuple(pairs), N)


@dataclass(frozen=True)
class TraceVector:
    """Traces (m_2, ..., m_n) of an incompressible n x n matrix (m_1 = 0)."""

    m: tuple

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(self.m))
        if len(self.m) < 1:
            raise InvalidInputError("trace vector needs at least m_2")

    @property
    def n(self) -> int:
        return len(self.m) + 1


def pair_sum_multiplier(pairs, n: int) -> Optional[int]:
    """N such that the pairs satisfy the pair-sum identity in dimension n, else None.

    Coefficient of lambda_k on the left is the number of pairs containing k,
    so the identity holds iff every index 1..n occurs the same number of times.
    """
    counts = Counter()
    for i, j in pairs:
        if i == j or not (1 <= i <= n and 1 <= j <= n):
            return None
        counts[i] += 1
        counts[j] += 1
    values = {counts.get(k, 0) for k in range(1, n + 1)}
    if len(values) != 1:
        return None
    N = values.pop()
    return N if N > 0 else None


def build_index_sequences(n: int) -> list:
    """The floor(n/2) independent pair sequences built by one admissible exchange each.

    Even n: start from (1,2)(3,4)...(n-1,n) and for k >= 2 replace the pairs
    (2k-3, 2k-2)(2k-1, 2k) by (2k-3, 2k-1)(2k-2, 2k).  Odd n: start from the
    cycle (1,2)(2,3)...(n,1) and replace (2k-3,2k-2)(2k-2,2k-1)(2k-1,2k) by
    (2k-3,2k-1)(2k-2,2k-1)(2k-2,2k).
    """
    if n < 2:
        raise UnsupportedDimensionError("pair sequences need n >= 2")
    m = n // 2
    seqs = []
    if n % 2 == 0:
        base = [(2 * i - 1, 2 * i) for i in range(1, m + 1)]
        seqs.append(base)
        for k in range(2, m + 1):
            s = list(base)
            s[k - 2] = (2 * k - 3, 2 * k - 1)
            s[k - 1] = (2 * k - 2, 2 * k)
            seqs.append(s)
        N = 1
    else:
        base = [(i, i + 1) for i in range(1, n)] + [(n, 1)]
        seqs.append(base)
        for k in range(2, m + 1):
            s = list(base)
            s[2 * k - 4] = (2 * k - 3, 2 * k - 1)
            s[2 * k - 3] = (2 * k - 2, 2 * k - 1)
            s[2 * k - 2] = (2 * k - 2, 2 * k)
            seqs.append(s)
        N = 2
    out = []
    for s in seqs:
        got = pair_sum_multiplier(s, n)
        assert got == N, (s, got)
        out.append(IndexPairSequence(tuple(s), N))
    return out


def _values(lambdas) -> np.ndarray:
    if isinstance(lambdas, Spectrum):
        return lambdas.values
    return np.asarray(lambdas)


def eval_invariant_product(seq: IndexPairSequence, lambdas) -> complex:
    """prod over (i, j) in seq of (lambda_i - lambda_j)."""
    v = _values(lambdas)
    if seq.max_index > v.size:
        raise InvalidInputError(f"sequence uses index {seq.max_index} but n={v.size}")
    out = 1.0 + 0j
    for i, j in seq.pairs:
        out *= v[i - 1] - v[j - 1]
    return complex(out)


def pair_differences_from_gaps(gaps) -> np.ndarray:
    """Matrix D[i, j] = lambda_i - lambda_j assembled from neighbouring gaps.

    ``gaps`` is (g_1, ..., g_{n-1}) with g_i = lambda_{i+1} - lambda_i.  Each
    difference is a partial sum of gaps, never a difference of large values.
    """
    g = np.asarray(gaps)
    n = g.size + 1
    D = np.zeros((n, n), dtype=np.result_type(g.dtype, float))
    for i in range(n):
        acc = 0.0
        for j in range(i + 1, n):
            acc = acc + g[j - 1]
            D[j, i] = acc
            D[i, j] = -acc
    return D


def eval_invariant_product_from_gaps(seq: IndexPairSequence, gaps, rank=None) -> complex:
    """Pair product from neighbouring gaps.

    ``rank[i]`` is the position of eigenvalue i (0-based) in the gap ordering,
    for spectra integrated in sorted order but labelled in user order.
    """
    D = pair_differences_from_gaps(gaps)
    r = np.arange(D.shape[0]) if rank is None else np.asarray(rank)
    out = 1.0 + 0j
    for i, j in seq.pairs:
        out *= D[r[i - 1], r[j - 1]]
    return complex(out)


def eval_rep_invariant(seq: IndexPairSequence, state) -> complex:
    """Pair product divided by rho**N; ``state`` is an REPState or [rho, lambdas...]."""
    from .models import REPState

    if isinstance(state, REPState):
        rho, lam = state.rho, state.lambdas.values
    else:
        y = np.asarray(state)
        rho, lam = float(np.real(y[0])), y[1:]
    if not rho > 0:
        raise DomainError(f"density must be positive, got {rho}")
    return eval_invariant_product(seq, lam) / rho ** seq.N


def re_invariants(lambdas, n: Optional[int] = None) -> list:
    """All constructed pair products for a spectrum."""
    v = _values(lambdas)
    return [eval_invariant_product(s, v) for s in build_index_sequences(n or v.size)]


def char_coeffs_from_power_sums(a: Sequence) -> list:
    """Characteristic coefficients (q_0, ..., q_n) from power sums (a_1, ..., a_n).

    det(lambda I - A) = sum_k q_{n-k} lambda^k.  Matching powers of eps in
    det(I + eps A) = exp(tr log(I + eps A)) gives k q_k = -sum_{i=1..k} a_i q_{k-i}.
    Exact for Fraction inputs.
    """
    a = list(a)
    if not a:
        raise InvalidInputError("need at least one power sum")
    q = [a[0] * 0 + 1]
    for k in range(1, len(a) + 1):
        acc = a[0] * 0
        for i in range(1, k + 1):
            acc = acc + a[i - 1] * q[k - i]
        q.append(-acc / k)
    return q


def close_trace(m) -> float:
    """m_{n+1} from (m_2, ..., m_n) via Cayley-Hamilton, with m_1 = 0."""
    if isinstance(m, TraceVector):
        m = m.m
    m = list(m)
    n = len(m) + 1
    zero = m[0] * 0
    power = [zero] + m  # power[k-1] = m_k
    q = char_coeffs_from_power_sums(power)
    # tr(M^{n+1}) + sum_{j=1..n} q_j tr(M^{n+1-j}) = 0
    acc = zero
    for j in range(1, n + 1):
        acc = acc + q[j] * power[n - j]
    return -acc


def eval_trace_invariants(m) -> list:
    """Conserved combinations of traces for n = 3 and n = 4."""
    if isinstance(m, TraceVector):
        m = m.m
    m = list(m)
    n = len(m) + 1
    if n == 3:
        m2, m3 = m
        return [6 * m3 ** 2 - m2 ** 3]
    if n == 4:
        m2, m3, m4 = m
        c1 = 12 * m4 - 7 * m2 ** 2
        return [c1, 3 * m3 ** 2 - m2 ** 3 - (3 * c1 / 4) * m2]
    raise UnsupportedDimensionError(f"trace invariants are only known for n = 3, 4 (got {n})")


def complex_pair_invariant(beta: float, gamma: float) -> float:
    """(beta^2 + 9 gamma^2) beta, conserved by the 3D complex-pair system."""
    return (beta * beta + 9 * gamma * gamma) * beta


def gamma_energy(Gamma, dGamma, d0: float, Lambda0: float, k: float, rho0: float):
    """First integral of the 2D indicator ODE; identically zero on exact paths.

    [Gamma']^2 - d0^2 - 4 Lambda0 (Gamma - 1) - 2 k rho0 Gamma ln Gamma.
    """
    G = np.asarray(Gamma, dtype=float)
    dG = np.asarray(dGamma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        glog = np.where(G > 0, G * np.log(np.where(G > 0, G, 1.0)), 0.0)
    return dG * dG - d0 * d0 - 4 * Lambda0 * (G - 1) - 2 * k * rho0 * glog


def relative_drift(values, scale: Optional[float] = None) -> float:
    """max |v(t) - v(0)| / |v(0)| (or / scale when given or when v(0) = 0)."""
    v = np.asarray(values)
    ref = abs(v[0]) if scale is None else scale
    if ref == 0:
        ref = max(1.0, float(np.max(np.abs(v))))
    return float(np.max(np.abs(v - v[0])) / ref)
