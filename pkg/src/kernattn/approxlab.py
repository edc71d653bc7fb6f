"""Separable approximation of continuous targets ``F(t, s)`` on ``[0, 1]^2``.

Two approximators are compared on the same grid: the truncated SVD of the
sampled matrix (the best rank-r factorization in Frobenius norm, used as a
reference) and pairs of two-layer ReLU networks ``q, k`` with
``F(t, s) ~ sum_l q_l(t) k_l(s)``.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

import numpy as np

from .nets import FitOptions, TwoLayerNet, fit_pair
from .numcore import Rng

TARGETS = {
    "product": lambda t, s: t * s,
    "constant": lambda t, s: np.ones(np.broadcast(t, s).shape),
    "sincos_plus_product": lambda t, s: np.sin(3.0 * t) * np.cos(2.0 * s) + t * s,
    "gauss_bump": lambda t, s: np.exp(-5.0 * (t - s) ** 2),
    "exp_product": lambda t, s: np.exp(t * s),
}

DEFAULT_GRID = 64
SWEEP_COLUMNS = ("dh", "m", "seed", "sup_error", "mean_error", "svd_lower_bound")


@dataclass(frozen=True)
class GridFunctionSpec:
    """A named target on ``[0, 1] x [0, 1]`` sampled at ``G`` evenly spaced points per axis."""

    name: str
    G: int = DEFAULT_GRID

    def __post_init__(self):
        if self.name not in TARGETS:
            raise ValueError(f"unknown target {self.name!r}; expected one of {sorted(TARGETS)}")
        if self.G < 1:
            raise ValueError(f"grid resolution must be >= 1, got {self.G}")

    def axis(self, G: int | None = None) -> np.ndarray:
        G = self.G if G is None else G
        return np.linspace(0.0, 1.0, G) if G > 1 else np.zeros(1)

    def matrix(self, G: int | None = None) -> np.ndarray:
        a = self.axis(G)
        return TARGETS[self.name](a[:, None], a[None, :])


@dataclass
class FactorizationResult:
    rank: int
    sup_error: float
    mean_abs_error: float
    error_curve: list[float] = field(default_factory=list)
    phi: np.ndarray | None = field(default=None, repr=False)
    psi: np.ndarray | None = field(default=None, repr=False)
    q_net: TwoLayerNet | None = field(default=None, repr=False)
    k_net: TwoLayerNet | None = field(default=None, repr=False)
    losses: list[float] = field(default_factory=list, repr=False)


def svd_error_curve(F: np.ndarray) -> list[float]:
    """Sup-norm residual of the rank-r truncation for r = 1..min(F.shape)."""
    U, S, Vt = np.linalg.svd(F)
    out = []
    approx = np.zeros_like(F)
    for r in range(len(S)):
        approx += S[r] * np.outer(U[:, r], Vt[r])
        out.append(float(np.max(np.abs(F - approx))))
    return out


def svd_separable(spec: GridFunctionSpec, rank: int) -> FactorizationResult:
    """Best Frobenius rank-``rank`` factorization ``F ~ phi psi^T`` of the grid matrix.

    ``phi[:, l] = sigma_l u_l`` and ``psi[:, l] = v_l`` are the separable
    factors sampled on the grid.
    """
    if not 1 <= rank <= spec.G:
        raise ValueError(f"rank must lie in [1, {spec.G}], got {rank}")
    F = spec.matrix()
    U, S, Vt = np.linalg.svd(F)
    phi = U[:, :rank] * S[:rank]
    psi = Vt[:rank].T
    resid = np.abs(F - phi @ psi.T)
    return FactorizationResult(
        rank, float(resid.max()), float(resid.mean()), svd_error_curve(F), phi=phi, psi=psi
    )


def fit_qk_networks(
    spec: GridFunctionSpec,
    dh: int,
    m: int,
    opts: FitOptions | None = None,
    seed: int = 0,
) -> FactorizationResult:
    """Train ``q, k: R -> R^dh`` (two-layer ReLU, ``m`` hidden units each) on the grid.

    Errors are reported on a grid twice as fine as the training grid.
    """
    if dh < 1 or m < 1:
        raise ValueError(f"need dh >= 1 and m >= 1, got dh={dh}, m={m}")
    opts = opts or FitOptions()
    rng = Rng(seed)
    qnet = TwoLayerNet.init(rng.spawn(0), 1, m, dh)
    knet = TwoLayerNet.init(rng.spawn(1), 1, m, dh)
    t = spec.axis()[:, None]
    losses = fit_pair(qnet, knet, t, t, spec.matrix(), opts)
    fine = spec.axis(2 * spec.G)[:, None]
    resid = np.abs(qnet(fine) @ knet(fine).T - spec.matrix(2 * spec.G))
    return FactorizationResult(
        dh, float(resid.max()), float(resid.mean()), q_net=qnet, k_net=knet, losses=losses
    )


@dataclass(frozen=True)
class SweepRow:
    dh: int
    m: int
    seed: int
    sup_error: float
    mean_error: float
    svd_lower_bound: float


def width_sweep(spec: GridFunctionSpec, dhs, ms, seeds, opts: FitOptions | None = None) -> list[SweepRow]:
    """One trained fit per ``(dh, m, seed)``.

    ``svd_lower_bound`` is the sup error of the rank-``dh`` SVD truncation on
    the training grid, a reference for the best achievable separable rank.
    """
    dhs, ms, seeds = list(dhs), list(ms), list(seeds)
    if not dhs or not ms or not seeds:
        raise ValueError("dh, m and seed lists must be non-empty")
    curve = svd_error_curve(spec.matrix())
    rows = []
    for dh in dhs:
        ref = curve[min(dh, len(curve)) - 1]
        for m in ms:
            for seed in seeds:
                res = fit_qk_networks(spec, dh, m, opts, seed)
                rows.append(SweepRow(dh, m, seed, res.sup_error, res.mean_abs_error, ref))
    return rows


def sweep_medians(rows) -> dict[tuple[int, int], float]:
    """Median sup error over seeds for each ``(dh, m)``."""
    groups: dict[tuple[int, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r.dh, r.m), []).append(r.sup_error)
    return {k: statistics.median(v) for k, v in groups.items()}


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r.dh, r.m, r.seed] + [format(x, ".17g") for x in (r.sup_error, r.mean_error, r.svd_lower_bound)])
    return buf.getvalue()


def curve_to_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "sup_error"])
    for r, e in enumerate(curve, 1):
        w.writerow([r, format(e, ".17g")])
    return buf.getvalue()


def is_non_increasing(values, slack: float = 0.0) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


__all__ = [
    "DEFAULT_GRID",
    "FactorizationResult",
    "GridFunctionSpec",
    "SWEEP_COLUMNS",
    "SweepRow",
    "TARGETS",
    "curve_to_csv",
    "fit_qk_networks",
    "is_non_increasing",
    "svd_error_curve",
    "svd_separable",
    "sweep_medians",
    "sweep_to_csv",
    "width_sweep",
]
