"""Command-line front end.

Usage::

    kernattn <subcommand> --config <path.json> [--out <dir>] [--seeds s1,s2,...]

Exit codes: 0 success, 1 check or experiment failure, 2 configuration error.
Every run writes ``config.json`` (the resolved configuration) into its
output directory next to the results.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import approxlab, binarykm, data, experiments
from .kernels import KINDS, KernelConfigError, KernelSpec
from .model import (
    CheckpointError,
    ConfigError,
    EncoderConfig,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    strict_from_dict,
)
from .nets import FitOptions

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class CheckFailed(Exception):
    pass


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# configurations


@dataclass(frozen=True)
class KernelCheckConfig:
    seed: int = 0
    out: str = "kernel-check"
    kernels: list = field(default_factory=lambda: list(KINDS))
    head_dim: int = 4
    trials: int = 10
    tol: float = 1e-6


@dataclass(frozen=True)
class FeatmapConfig:
    seed: int = 0
    out: str = "featmap-convergence"
    d: int = 4
    N_max: int = 12
    trials: int = 20
    max_logit: float = 2.0
    threshold: float = 1e-5


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    out: str = "data"
    task: str = "majority"
    sizes: dict = field(default_factory=lambda: {"train": 2000, "valid": 500, "test": 500})
    vocab_size: int = 32
    seq_len: int = 24
    num_classes: int = 2
    class_balance: list | None = None
    majority_bias: float = 0.7


@dataclass(frozen=True)
class TrainRunConfig:
    seed: int = 0
    out: str = "train"
    train: str = "data/train.jsonl"
    valid: str = "data/valid.jsonl"
    test: str | None = None
    kernels: list | None = None
    seeds: list | None = None
    model: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    out: str = "eval"
    checkpoint: str = "train/model.ckpt"
    data: str = "data/test.jsonl"
    model: dict | None = None


@dataclass(frozen=True)
class BinaryFitConfig:
    seed: int = 0
    out: str = "binary-fit"
    dataset: str = "binary.json"
    mode: str = "interpolate"
    kernel_x: dict | None = None
    kernel_y: dict | None = None
    lambda_x: float = 0.0
    lambda_y: float = 0.0
    max_iters: int = 200
    tol: float = 1e-12
    max_residual: float | None = None
    distill: dict | None = None


@dataclass(frozen=True)
class ApproxConfig:
    seed: int = 0
    out: str = "approx-lab"
    target: str = "gauss_bump"
    G: int = approxlab.DEFAULT_GRID
    ranks: list = field(default_factory=lambda: [1, 2, 4, 8])
    dh: list = field(default_factory=lambda: [1, 2, 4, 8])
    m: list = field(default_factory=lambda: [64])
    seeds: list | None = None
    steps: int = FitOptions.steps
    lr: float = FitOptions.lr
    final_lr: float = FitOptions.final_lr
    polish_sweeps: int = FitOptions.polish_sweeps
    max_sup_error: float | None = None


DISTILL_FIELDS = {"dh", "m", "grid", "eval_grid", "normalize", "steps", "lr", "final_lr", "seed", "polish_sweeps"}


def _load_config(cls, path: str | None, args) -> object:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    cfg = strict_from_dict(cls, raw)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seeds is not None:
        if "seeds" in {f.name for f in fields(cls)}:
            overrides["seeds"] = args.seeds
        elif len(args.seeds) == 1:
            overrides["seed"] = args.seeds[0]
        else:
            raise ConfigError(f"{cls.__name__} takes a single seed, got {args.seeds}")
    return cls(**{**asdict(cfg), **overrides})


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _positive(name: str, value) -> None:
    if not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")


# subcommands


def cmd_kernel_check(cfg: KernelCheckConfig, out: Path) -> int:
    for k in cfg.kernels:
        if k not in KINDS:
            raise ConfigError(f"unknown kernel {k!r}; expected one of {list(KINDS)}")
    _positive("head_dim", cfg.head_dim)
    _positive("trials", cfg.trials)
    rows = experiments.kernel_checks(cfg.kernels, cfg.head_dim, cfg.trials, cfg.seed, cfg.tol)
    _write(out / "checks.csv", experiments.checks_to_csv(rows))
    failed = [f"{r.check}/{r.kernel}" for r in rows if not r.passed]
    if failed:
        raise CheckFailed(f"failed checks: {', '.join(failed)}")
    return EXIT_OK


def cmd_featmap(cfg: FeatmapConfig, out: Path) -> int:
    _positive("d", cfg.d)
    _positive("trials", cfg.trials)
    if not 0 <= cfg.N_max <= 30:
        raise ConfigError(f"N_max must lie in [0, 30], got {cfg.N_max}")
    try:
        reports, text = experiments.featmap_convergence(cfg.d, cfg.N_max, cfg.trials, cfg.seed, cfg.max_logit)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    finals = [rep[-1].rel_error for rep in reports]
    _write(out / "convergence.csv", text)
    _write(out / "summary.json", _json_text({
        "max_final_rel_error": max(finals),
        "threshold": cfg.threshold,
        "passed": max(finals) <= cfg.threshold,
    }))
    if max(finals) > cfg.threshold:
        bad = [i for i, e in enumerate(finals) if e > cfg.threshold]
        raise CheckFailed(f"final relative error above {cfg.threshold:g} for trials {bad}")
    return EXIT_OK


def cmd_synth(cfg: SynthConfig, out: Path) -> int:
    if cfg.task not in data.TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}; expected one of {list(data.TASKS)}")
    if set(cfg.sizes) != {"train", "valid", "test"}:
        raise ConfigError("sizes must give exactly train, valid and test counts")
    for split, n in cfg.sizes.items():
        if not isinstance(n, int) or n < 0:
            raise ConfigError(f"size of {split} must be a non-negative integer, got {n!r}")
    try:
        data.write_splits(
            out, cfg.task, cfg.sizes, cfg.seed, vocab_size=cfg.vocab_size, seq_len=cfg.seq_len,
            num_classes=cfg.num_classes, class_balance=cfg.class_balance, majority_bias=cfg.majority_bias,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return EXIT_OK


def cmd_train(cfg: TrainRunConfig, out: Path) -> int:
    mcfg = strict_from_dict(EncoderConfig, cfg.model)
    tcfg = strict_from_dict(TrainConfig, cfg.optim)
    kinds = cfg.kernels or [mcfg.kernel]
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"unknown kernel {k!r}; expected one of {list(KINDS)}")
    seeds = cfg.seeds or [cfg.seed]
    try:
        read = lambda p: data.read_jsonl(p, mcfg.num_classes, mcfg.vocab_size)  # noqa: E731
        train_data, valid_data = read(cfg.train), read(cfg.valid)
        test_data = read(cfg.test) if cfg.test else None
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from None
    results = []
    for kind in kinds:
        for seed in seeds:
            res = experiments.run_training(kind, seed, train_data, valid_data, test_data, mcfg, tcfg)
            run_dir = out / kind / f"seed{seed}" if len(kinds) * len(seeds) > 1 else out
            _write(run_dir / "report.csv", res.report.to_csv())
            summary = res.report.summary()
            if test_data is not None:
                summary["test_accuracy"] = res.test_accuracy
            _write(run_dir / "summary.json", _json_text(summary))
            save_checkpoint(run_dir / "model.ckpt", res.model, seed, res.report.steps)
            results.append(res)
    if len(results) > 1 and test_data is not None:
        _write(out / "runs.csv", experiments.runs_csv(results))
        _write(out / "table.csv", experiments.ablation_csv(results))
        table = {k: {"runs": n, "mean": mu, "std": sd, "table": cell}
                 for k, n, mu, sd, cell in experiments.ablation_rows(results)}
        _write(out / "table.json", _json_text(table))
        for k, _, _, _, cell in experiments.ablation_rows(results):
            print(f"{k:>18}  {cell}")
    return EXIT_OK


def cmd_eval(cfg: EvalConfig, out: Path) -> int:
    expect = strict_from_dict(EncoderConfig, cfg.model) if cfg.model is not None else None
    model, header = load_checkpoint(cfg.checkpoint, expect)
    try:
        records = data.read_jsonl(cfg.data, model.cfg.num_classes, model.cfg.vocab_size)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from None
    result = evaluate(model, records)
    result["checkpoint_seed"] = header["seed"]
    _write(out / "eval.json", _json_text(result))
    print(f"accuracy {result['accuracy']:.4f} on {result['n']} records")
    return EXIT_OK


def _kernel(spec: dict | None, dim: int) -> KernelSpec:
    if spec is None:
        return binarykm.default_kernel(dim)
    return KernelSpec.from_dict({"head_dim": dim, **spec})


def _points(spec, dim: int, name: str) -> np.ndarray:
    # either explicit point lists or {"lo", "hi", "n"} for an even 1-D grid
    if isinstance(spec, dict):
        if set(spec) != {"lo", "hi", "n"} or dim != 1:
            raise ConfigError(f"{name} as an object needs exactly lo, hi, n and a 1-D domain")
        return np.linspace(spec["lo"], spec["hi"], spec["n"])[:, None]
    arr = np.asarray(spec, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ConfigError(f"{name} must be a list of {dim}-dimensional points")
    return arr


def cmd_binary_fit(cfg: BinaryFitConfig, out: Path) -> int:
    try:
        ds = binarykm.BinaryDataset.load(cfg.dataset)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read binary dataset {cfg.dataset}: {exc}") from None
    kx = _kernel(cfg.kernel_x, ds.xs.shape[1])
    ky = _kernel(cfg.kernel_y, ds.ys.shape[1])
    if cfg.mode == "interpolate":
        model = binarykm.interpolate(ds, kx, ky)
    elif cfg.mode == "regularized":
        model = binarykm.fit_regularized(ds, kx, ky, cfg.lambda_x, cfg.lambda_y)
    elif cfg.mode == "rank1":
        model = binarykm.fit_rank1(ds, kx, ky, cfg.lambda_x, cfg.lambda_y, cfg.max_iters, cfg.tol)
    else:
        raise ConfigError(f"mode must be interpolate, regularized or rank1, got {cfg.mode!r}")
    pred = model.predict()
    resid = np.abs(pred - ds.Z)
    _write(out / "model.json", model.to_json())
    rows = [(i, j, float(ds.Z[i, j]), float(pred[i, j])) for i in range(ds.Z.shape[0]) for j in range(ds.Z.shape[1])]
    _write(out / "predictions.csv", experiments.rows_to_csv(["i", "j", "z", "z_hat"], rows))
    summary = {
        "mode": cfg.mode,
        "max_abs_residual": float(resid.max()),
        "objective": model.info["objective"],
    }
    if "iterations" in model.info:
        summary["iterations"] = model.info["iterations"]
    if cfg.distill is not None:
        summary["distill"] = _distill(cfg, model, ds)
    _write(out / "summary.json", _json_text(summary))
    if cfg.max_residual is not None and summary["max_abs_residual"] > cfg.max_residual:
        raise CheckFailed(f"max residual {summary['max_abs_residual']:.3g} exceeds {cfg.max_residual:g}")
    return EXIT_OK


def _distill(cfg: BinaryFitConfig, model, ds) -> dict:
    d = cfg.distill
    unknown = sorted(set(d) - DISTILL_FIELDS)
    if unknown:
        raise ConfigError(f"unknown distill fields: {unknown}")
    grid = d.get("grid", {"lo": 0.0, "hi": 1.0, "n": 32})
    gx, gy = _points(grid, ds.xs.shape[1], "grid"), _points(grid, ds.ys.shape[1], "grid")
    ev = d.get("eval_grid")
    ex = ey = None
    if ev is not None:
        ex, ey = _points(ev, ds.xs.shape[1], "eval_grid"), _points(ev, ds.ys.shape[1], "eval_grid")
    opts = FitOptions(
        steps=d.get("steps", FitOptions.steps),
        lr=d.get("lr", FitOptions.lr),
        final_lr=d.get("final_lr", FitOptions.final_lr),
        polish_sweeps=d.get("polish_sweeps", FitOptions.polish_sweeps),
    )
    res = binarykm.distill(
        model, gx, gy, d.get("dh", 8), d.get("m", 64), opts, d.get("seed", cfg.seed), ex, ey, d.get("normalize", False)
    )
    return {"sup_error": res.sup_error, "mean_error": res.mean_error, "train_loss": res.train_loss}


def cmd_approx(cfg: ApproxConfig, out: Path) -> int:
    try:
        spec = approxlab.GridFunctionSpec(cfg.target, cfg.G)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for r in cfg.ranks:
        if not isinstance(r, int) or not 1 <= r <= cfg.G:
            raise ConfigError(f"ranks must be integers in [1, {cfg.G}], got {r!r}")
    if not cfg.dh or not cfg.m:
        raise ConfigError("dh and m lists must be non-empty")
    curve = approxlab.svd_error_curve(spec.matrix())
    _write(out / "svd_curve.csv", approxlab.curve_to_csv(curve))
    opts = FitOptions(steps=cfg.steps, lr=cfg.lr, final_lr=cfg.final_lr, polish_sweeps=cfg.polish_sweeps)
    seeds = cfg.seeds or [cfg.seed]
    rows = approxlab.width_sweep(spec, cfg.dh, cfg.m, seeds, opts)
    _write(out / "sweep.csv", approxlab.sweep_to_csv(rows))
    medians = approxlab.sweep_medians(rows)
    summary = {
        "svd_sup_error": {str(r): curve[r - 1] for r in cfg.ranks},
        "median_sup_error": {f"dh={dh},m={m}": v for (dh, m), v in medians.items()},
    }
    _write(out / "summary.json", _json_text(summary))
    for (dh, m), v in medians.items():
        print(f"dh={dh:<3} m={m:<4} median sup error {v:.4g}")
    if cfg.max_sup_error is not None:
        best = min(medians.values())
        if best > cfg.max_sup_error:
            raise CheckFailed(f"best median sup error {best:.4g} exceeds {cfg.max_sup_error:g}")
    return EXIT_OK


COMMANDS = {
    "kernel-check": (KernelCheckConfig, cmd_kernel_check, "check kernel values, symmetry, gradients and softmax equivalence"),
    "featmap-convergence": (FeatmapConfig, cmd_featmap, "truncated feature-map error against the exact kernel"),
    "synth-data": (SynthConfig, cmd_synth, "write synthetic train/valid/test JSONL splits"),
    "train": (TrainRunConfig, cmd_train, "train encoder classifiers, optionally over kernels and seeds"),
    "eval": (EvalConfig, cmd_eval, "evaluate a checkpoint on a JSONL dataset"),
    "binary-fit": (BinaryFitConfig, cmd_binary_fit, "fit a paired-domain kernel machine"),
    "approx-lab": (ApproxConfig, cmd_approx, "separable approximation: SVD reference and q/k network sweep"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernattn", description="Kernelized attention experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config; omitted fields take their defaults")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seeds (overrides the config)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    cls, fn, _ = COMMANDS[args.command]
    try:
        cfg = _load_config(cls, args.config, args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.json", _json_text({"command": args.command, **asdict(cfg)}))
        return fn(cfg, out)
    except (ConfigError, KernelConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
