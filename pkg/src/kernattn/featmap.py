"""Truncated explicit feature maps for the exponentiated dot-product kernel.

For ``q, k`` in R^d the kernel ``exp(q.k / sqrt(d))`` factors through the
monomial features

    phi_p(v) = prod_l v_l^{p_l} / (sqrt(p_1! ... p_d!) * d^{|p|/4})

indexed by multi-indices ``p``.  By the multinomial theorem the degree-n
block of ``phi(q) . phi(k)`` equals ``(q.k/sqrt(d))^n / n!``, so truncating
at degree ``N`` gives the N-th partial sum of the exponential series.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

MAX_DEGREE = 30
MAX_FEATURES = 10**6
DEFAULT_DEGREE = 12


class MultiIndex(NamedTuple):
    powers: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.powers)


def num_features(d: int, N: int) -> int:
    return math.comb(N + d, d)


def _compositions(n: int, d: int):
    # all d-tuples of non-negative ints summing to n, ascending lexicographic
    if d == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, d - 1):
            yield (first, *rest)


def enumerate_multi_indices(d: int, N: int) -> list[MultiIndex]:
    """All multi-indices of length ``d`` and degree <= ``N``.

    Ordered by ascending degree, then lexicographically within a degree.
    """
    if d < 1 or N < 0:
        raise ValueError(f"need d >= 1 and N >= 0, got d={d}, N={N}")
    return [MultiIndex(p) for n in range(N + 1) for p in _compositions(n, d)]


def _check_size(d: int, N: int) -> None:
    if N > MAX_DEGREE:
        raise ValueError(f"truncation degree {N} exceeds the limit {MAX_DEGREE}")
    if num_features(d, N) > MAX_FEATURES:
        raise ValueError(
            f"C({N}+{d}, {d}) = {num_features(d, N)} features exceeds the limit {MAX_FEATURES}"
        )


@dataclass(frozen=True)
class TruncatedFeatureMap:
    """Feature map truncated at total degree ``max_degree``."""

    head_dim: int
    max_degree: int = DEFAULT_DEGREE
    indices: list[MultiIndex] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_size(self.head_dim, self.max_degree)
        object.__setattr__(self, "indices", enumerate_multi_indices(self.head_dim, self.max_degree))

    @cached_property
    def powers(self) -> np.ndarray:
        return np.array([p.powers for p in self.indices], dtype=np.int64)

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.powers.sum(axis=1)

    @cached_property
    def coefficients(self) -> np.ndarray:
        # log-space: -0.5 * sum(log p_l!) - (n/4) log d
        log_fact = np.vectorize(math.lgamma)(self.powers + 1.0).sum(axis=1)
        return np.exp(-0.5 * log_fact - 0.25 * self.degrees * math.log(self.head_dim))

    def __len__(self) -> int:
        return len(self.indices)

    def coefficient(self, index) -> float:
        powers = tuple(index.powers if isinstance(index, MultiIndex) else index)
        n = sum(powers)
        return math.exp(-0.5 * sum(math.lgamma(p + 1) for p in powers) - 0.25 * n * math.log(self.head_dim))


def _vector(v, d: int) -> np.ndarray:
    v = np.asarray(getattr(v, "data", v), dtype=np.float64)
    if v.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got shape {v.shape}")
    return v


def feature_vector(fm: TruncatedFeatureMap, v) -> np.ndarray:
    """Features ``coeff(p) * prod_l v_l^{p_l}`` in multi-index order."""
    v = _vector(v, fm.head_dim)
    # 0**0 == 1 in numpy, as needed for the degree-0 entry
    monomials = np.prod(v[None, :] ** fm.powers, axis=1)
    return fm.coefficients * monomials


def truncated_kernel(fm: TruncatedFeatureMap, q, k) -> float:
    """Dot product of the two truncated feature vectors."""
    return float(feature_vector(fm, q) @ feature_vector(fm, k))


class ConvergenceRow(NamedTuple):
    N: int
    value: float
    abs_error: float
    rel_error: float


def tail_bound(x: float, N: int) -> float:
    """Lagrange bound on ``|exp(x) - sum_{n<=N} x^n/n!|`` relative to ``exp(x)``."""
    ax = abs(x)
    return math.exp((N + 1) * math.log(ax) - math.lgamma(N + 2) + ax - x) if ax > 0 else 0.0


def convergence_report(d: int, q, k, N_max: int) -> list[ConvergenceRow]:
    """Truncated kernel value and error against ``exp(q.k/sqrt(d))`` for N = 0..N_max."""
    q = _vector(q, d)
    k = _vector(k, d)
    fm = TruncatedFeatureMap(d, N_max)
    prods = feature_vector(fm, q) * feature_vector(fm, k)
    exact = math.exp(float(q @ k) / math.sqrt(d))
    rows = []
    for n in range(N_max + 1):
        # cumulative sum by degree block keeps each N consistent with truncated_kernel
        value = float(prods[fm.degrees <= n].sum())
        err = abs(value - exact)
        rows.append(ConvergenceRow(n, value, err, err / exact))
    return rows


def report_to_csv(rows, trial: int | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["N", "value", "abs_error", "rel_error"]
    writer.writerow((["trial"] if trial is not None else []) + header)
    for r in rows:
        cells = [str(r.N)] + [format(x, ".17g") for x in (r.value, r.abs_error, r.rel_error)]
        writer.writerow(([str(trial)] if trial is not None else []) + cells)
    return buf.getvalue()
