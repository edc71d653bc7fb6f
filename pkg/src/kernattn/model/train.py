"""Training loop and evaluation for :class:`EncoderClassifier`."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import SequenceRecord, pad_batch
from ..numcore import NonFiniteError, Rng, no_grad
from .config import TrainConfig
from .encoder import EncoderClassifier, cross_entropy
from .optim import Adam, warmup_lr


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    valid_acc: float
    lr: float


@dataclass
class TrainReport:
    rows: list[EpochRow]
    best_epoch: int
    best_valid_acc: float
    steps: int
    stopped_early: bool
    best_state: dict[str, np.ndarray] = field(repr=False)

    @property
    def final_train_loss(self) -> float:
        return self.rows[-1].train_loss

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_acc", "lr"])
        for r in self.rows:
            w.writerow([r.epoch, format(r.train_loss, ".17g"), format(r.valid_acc, ".17g"), format(r.lr, ".17g")])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_valid_acc": self.best_valid_acc,
            "epochs_run": len(self.rows),
            "final_train_loss": self.final_train_loss,
            "steps": self.steps,
            "stopped_early": self.stopped_early,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def predict(model: EncoderClassifier, records, batch_size: int = 256) -> np.ndarray:
    preds = []
    with no_grad():
        for i in range(0, len(records), batch_size):
            tokens, mask, _ = pad_batch(records[i : i + batch_size])
            preds.append(np.argmax(model.forward(tokens, mask).data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: EncoderClassifier, records) -> dict:
    """Accuracy overall and per true class."""
    labels = np.array([r.label for r in records], dtype=np.int64)
    preds = predict(model, records)
    per_class = {}
    for c in range(model.cfg.num_classes):
        sel = labels == c
        per_class[str(c)] = {
            "count": int(sel.sum()),
            "accuracy": float((preds[sel] == c).mean()) if sel.any() else None,
        }
    return {"accuracy": float((preds == labels).mean()), "n": int(len(labels)), "per_class": per_class}


def train(
    model: EncoderClassifier,
    train_data: list[SequenceRecord],
    valid_data: list[SequenceRecord],
    cfg: TrainConfig,
) -> TrainReport:
    """Minimize cross-entropy with Adam.

    The learning rate ramps linearly over ``warmup_steps`` updates, is
    multiplied by ``lr_decay_factor`` after ``decay_patience`` epochs without
    a validation-accuracy improvement, and training stops after ``patience``
    such epochs.  On return the model holds the best-validation parameters.
    """
    if not train_data or not valid_data:
        raise ValueError("train and valid data must be non-empty")
    C = model.cfg.num_classes
    if any(r.label >= C for r in train_data) or any(r.label >= C for r in valid_data):
        raise ValueError(f"labels must be < num_classes={C}")

    params = model.parameters()
    opt = Adam(list(params.values()), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    shuffler = Rng(cfg.seed).spawn(1)
    n = len(train_data)
    step = 0
    decay = 1.0
    best_acc = -1.0
    best_epoch = 0
    best_state = {k: v.data.copy() for k, v in params.items()}
    since_best = 0
    since_decay = 0
    rows = []
    stopped = False

    for epoch in range(1, cfg.epochs + 1):
        order = shuffler.permutation(n)
        losses = []
        lr = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_data[i] for i in order[start : start + cfg.batch_size]]
            tokens, mask, labels = pad_batch(batch)
            opt.zero_grad()
            loss = cross_entropy(model.forward(tokens, mask), labels)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}")
            loss.backward()
            lr = warmup_lr(step, cfg.learning_rate, cfg.warmup_steps, cfg.warmup_start) * decay
            opt.step(lr)
            step += 1
            losses.extend([value] * len(batch))
        for name, p in params.items():
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged(f"parameter {name} became non-finite in epoch {epoch}")

        acc = evaluate(model, valid_data)["accuracy"]
        rows.append(EpochRow(epoch, math.fsum(losses) / len(losses), acc, lr))
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_state = {k: v.data.copy() for k, v in params.items()}
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_best >= cfg.patience:
                stopped = True
                break
            if since_decay >= cfg.decay_patience:
                decay *= cfg.lr_decay_factor
                since_decay = 0

    for k, p in params.items():
        p.assign_(best_state[k])
    return TrainReport(rows, best_epoch, best_acc, step, stopped, best_state)


def overfit_check(model: EncoderClassifier, record: SequenceRecord, steps: int, lr: float = 1e-3) -> list[float]:
    """Repeated Adam steps on a single example; returns the loss trajectory."""
    params = model.parameters()
    opt = Adam(list(params.values()))
    tokens, mask, labels = pad_batch([record])
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = cross_entropy(model.forward(tokens, mask), labels)
        if not math.isfinite(loss.item()):
            raise NonFiniteError("loss became non-finite")
        loss.backward()
        opt.step(lr)
        losses.append(loss.item())
    return losses
