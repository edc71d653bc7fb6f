"""Seeded experiment drivers shared by the command line and the acceptance suite.

Every driver returns plain rows plus a CSV rendering so that repeated runs
can be compared byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass

import numpy as np

from . import featmap
from .attention import AttentionLayerParams, attend, attention_weights
from .data import SequenceRecord
from .kernels import KINDS, KernelSpec, cross_gram, kernel_eval
from .kernels.spec import GAMMA_KINDS, TAU_KINDS
from .model import EncoderClassifier, EncoderConfig, TrainConfig, TrainReport, evaluate, train
from .numcore import Rng, grad_check, no_grad


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# feature-map convergence


def sample_pairs(rng: Rng, d: int, n: int, max_logit: float = 2.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gaussian ``(q, k)`` pairs, shrunk when needed so that ``|q.k|/sqrt(d) <= max_logit``."""
    pairs = []
    for _ in range(n):
        q, k = rng.normal(size=d), rng.normal(size=d)
        x = abs(float(q @ k)) / math.sqrt(d)
        if x > max_logit:
            c = math.sqrt(max_logit / x)
            q, k = q * c, k * c
        pairs.append((q, k))
    return pairs


def featmap_convergence(d: int, N_max: int, trials: int, seed: int, max_logit: float = 2.0):
    """Convergence reports for ``trials`` random pairs; returns ``(reports, csv)``."""
    pairs = sample_pairs(Rng(seed), d, trials, max_logit)
    reports = [featmap.convergence_report(d, q, k, N_max) for q, k in pairs]
    text = "".join(
        featmap.report_to_csv(rep, trial=i).split("\n", 1)[1] if i else featmap.report_to_csv(rep, trial=i)
        for i, rep in enumerate(reports)
    )
    return reports, text


# kernel catalog checks


@dataclass(frozen=True)
class CheckRow:
    check: str
    kernel: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tol)


def _random_spec(rng: Rng, kind: str, d: int, requires_grad: bool = False) -> KernelSpec:
    return KernelSpec.make(kind, d, float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.0, 1.0)), requires_grad)


def kernel_as_function(kind: str, head_dim: int):
    """``f(q, k, *scalars)`` evaluating the kernel, for gradient checks over the scalars too."""

    def f(q, k, *scalars):
        tt = scalars[0] if kind in TAU_KINDS else None
        gm = scalars[0] if kind in GAMMA_KINDS else None
        return kernel_eval(KernelSpec(kind, head_dim, tt, gm), q, k)

    return f


def softmax_attention_reference(w_q, w_k, w_v, w_o, targets, sources) -> np.ndarray:
    """Scaled dot-product softmax attention written directly in numpy."""
    H, d, _ = w_q.shape
    heads = []
    for h in range(H):
        q, k, v = targets @ w_q[h].T, sources @ w_k[h].T, sources @ w_v[h].T
        logits = q @ k.T / math.sqrt(d)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        heads.append((p / p.sum(axis=1, keepdims=True)) @ v)
    return np.concatenate(heads, axis=1) @ w_o.T


def kernel_checks(kinds=KINDS, head_dim: int = 4, trials: int = 10, seed: int = 0, tol: float = 1e-6) -> list[CheckRow]:
    """Value, symmetry, gradient and softmax-equivalence checks over the catalog.

    ``value`` compares the fused Gram kernel with per-pair evaluation,
    ``symmetry`` compares ``k(q, k)`` with ``k(k, q)``, ``grad`` runs a
    central-difference check including the kernel scalars, and
    ``softmax`` compares edp attention with a numpy softmax reference.
    All errors are relative errors.
    """
    root = Rng(seed)
    rows = []
    for idx, kind in enumerate(kinds):
        rng = root.spawn(idx)
        val = sym = grd = 0.0
        for _ in range(trials):
            spec = _random_spec(rng, kind, head_dim)
            Q, K = rng.normal(size=(3, head_dim)), rng.normal(size=(4, head_dim))
            with no_grad():
                G = cross_gram(spec, Q, K).data
                loop = np.array([[kernel_eval(spec, q, k).item() for k in K] for q in Q])
                swap = np.array([[kernel_eval(spec, k, q).item() for k in K] for q in Q])
            scale = np.maximum(1.0, np.abs(loop))
            val = max(val, float(np.max(np.abs(G - loop) / scale)))
            sym = max(sym, float(np.max(np.abs(swap - loop) / scale)))

            gspec = _random_spec(rng, kind, head_dim)
            at = [rng.normal(size=head_dim), rng.normal(size=head_dim)]
            at += [p.data for p in (gspec.theta_tau, gspec.gamma) if p is not None]
            grd = max(grd, grad_check(kernel_as_function(kind, head_dim), at).max_error)
        rows += [CheckRow("value", kind, val, tol), CheckRow("symmetry", kind, sym, tol), CheckRow("grad", kind, grd, tol)]

    rng = root.spawn(len(kinds))
    err = 0.0
    for _ in range(trials):
        p = AttentionLayerParams.init(rng, "edp", 2, head_dim, 2 * head_dim)
        t, s = rng.normal(size=(3, 2 * head_dim)), rng.normal(size=(4, 2 * head_dim))
        with no_grad():
            got = attend(p, t, s).data
        ref = softmax_attention_reference(p.w_q.data, p.w_k.data, p.w_v.data, p.w_o.data, t, s)
        err = max(err, float(np.max(np.abs(got - ref)) / max(1.0, float(np.max(np.abs(ref))))))
    rows.append(CheckRow("softmax", "edp", err, tol))
    return rows


def checks_to_csv(rows) -> str:
    return rows_to_csv(
        ["check", "kernel", "max_error", "tol", "passed"],
        [(r.check, r.kernel, r.max_error, r.tol, int(r.passed)) for r in rows],
    )


# masking / row-stochasticity


def masked_weight_errors(kind: str, trials: int, seed: int) -> tuple[float, float]:
    """Worst ``|row_sum - 1|`` and worst masked weight over random masked attention calls."""
    rng = Rng(seed)
    worst_sum = worst_masked = 0.0
    for _ in range(trials):
        H, d, D = 2, 4, 6
        T, S = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        p = AttentionLayerParams.init(
            rng, kind, H, d, D, theta_tau=float(rng.uniform(-1, 1)), gamma=float(rng.uniform(0, 1))
        )
        mask = rng.uniform(size=S) < 0.6
        mask[int(rng.integers(0, S))] = True
        with no_grad():
            a = attention_weights(p, rng.normal(size=(T, D)), rng.normal(size=(S, D)), mask).data
        worst_sum = max(worst_sum, float(np.max(np.abs(a[..., mask].sum(axis=-1) - 1.0))))
        worst_masked = max(worst_masked, float(np.max(np.abs(a[..., ~mask]), initial=0.0)))
    return worst_sum, worst_masked


# kernel ablation training


@dataclass
class RunResult:
    kernel: str
    seed: int
    report: TrainReport
    test_accuracy: float
    model: EncoderClassifier


def run_training(
    kind: str,
    seed: int,
    train_data: list[SequenceRecord],
    valid_data: list[SequenceRecord],
    test_data: list[SequenceRecord] | None = None,
    model_cfg: EncoderConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> RunResult:
    """Train one encoder with kernel ``kind``; the seed drives init and shuffling."""
    base = model_cfg or EncoderConfig()
    mcfg = EncoderConfig(**{**base.to_dict(), "kernel": kind})
    tcfg = TrainConfig(**{**(train_cfg or TrainConfig()).to_dict(), "seed": seed})
    model = EncoderClassifier(mcfg, Rng(seed).spawn(0))
    report = train(model, train_data, valid_data, tcfg)
    acc = evaluate(model, test_data)["accuracy"] if test_data else float("nan")
    return RunResult(kind, seed, report, acc, model)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1 denominator; 0 for a single value)."""
    values = [float(v) for v in values]
    return statistics.fmean(values), (statistics.stdev(values) if len(values) > 1 else 0.0)


def ablation_rows(results: list[RunResult]) -> list[tuple]:
    """``(kernel, runs, mean, std, cell)`` per kernel, test accuracy in percent."""
    out = []
    for kind in dict.fromkeys(r.kernel for r in results):
        accs = [100.0 * r.test_accuracy for r in results if r.kernel == kind]
        mu, sd = mean_std(accs)
        out.append((kind, len(accs), mu, sd, f"{mu:.2f} ± {sd:.2f}"))
    return out


def ablation_csv(results: list[RunResult]) -> str:
    return rows_to_csv(["kernel", "runs", "mean_test_acc", "std_test_acc", "table"], ablation_rows(results))


def runs_csv(results: list[RunResult]) -> str:
    return rows_to_csv(
        ["kernel", "seed", "epochs", "best_epoch", "final_train_loss", "best_valid_acc", "test_acc"],
        [
            (r.kernel, r.seed, len(r.report.rows), r.report.best_epoch, r.report.final_train_loss,
             r.report.best_valid_acc, r.test_accuracy)
            for r in results
        ],
    )


__all__ = [
    "CheckRow",
    "RunResult",
    "ablation_csv",
    "ablation_rows",
    "checks_to_csv",
    "featmap_convergence",
    "kernel_as_function",
    "kernel_checks",
    "masked_weight_errors",
    "mean_std",
    "rows_to_csv",
    "run_training",
    "runs_csv",
    "sample_pairs",
    "softmax_attention_reference",
]
