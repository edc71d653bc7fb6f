"""Sequence-classification records, JSONL I/O and synthetic tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import Rng

TASKS = ("majority", "copy-class")


@dataclass(frozen=True)
class SequenceRecord:
    tokens: tuple[int, ...]
    label: int

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("a sequence record needs at least one token")
        if any(t < 0 for t in self.tokens) or self.label < 0:
            raise ValueError("tokens and label must be non-negative")


def read_jsonl(path, num_classes: int | None = None, vocab_size: int | None = None) -> list[SequenceRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj) != {"tokens", "label"}:
                raise ValueError(f"{path}:{lineno}: records need exactly 'tokens' and 'label'")
            rec = SequenceRecord(tuple(int(t) for t in obj["tokens"]), int(obj["label"]))
            if num_classes is not None and rec.label >= num_classes:
                raise ValueError(f"{path}:{lineno}: label {rec.label} >= num_classes {num_classes}")
            if vocab_size is not None and max(rec.tokens) >= vocab_size:
                raise ValueError(f"{path}:{lineno}: token id >= vocab_size {vocab_size}")
            records.append(rec)
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"tokens": list(r.tokens), "label": r.label}) + "\n")


def pad_batch(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence; returns ``tokens, mask, labels``."""
    L = max(len(r.tokens) for r in records)
    tokens = np.zeros((len(records), L), dtype=np.int64)
    mask = np.zeros((len(records), L), dtype=bool)
    for i, r in enumerate(records):
        tokens[i, : len(r.tokens)] = r.tokens
        mask[i, : len(r.tokens)] = True
    labels = np.array([r.label for r in records], dtype=np.int64)
    return tokens, mask, labels


def token_buckets(vocab_size: int, num_classes: int) -> np.ndarray:
    """Contiguous split of token ids ``0..vocab_size-1`` into ``num_classes`` buckets."""
    if vocab_size < num_classes:
        raise ValueError(f"vocab_size {vocab_size} must be >= num_classes {num_classes}")
    return np.arange(vocab_size) * num_classes // vocab_size


def majority_label(tokens, buckets) -> int:
    """Bucket occurring most often among the tokens; ties go to the lowest bucket."""
    counts = np.bincount([int(buckets[t]) for t in tokens], minlength=int(np.max(buckets)) + 1)
    return int(np.argmax(counts))


def copy_class_label(tokens, buckets) -> int:
    return int(buckets[tokens[0]])


def _sample_majority(rng: Rng, label: int, length: int, members: list[np.ndarray], bias: float) -> list[int]:
    C = len(members)
    others = [c for c in range(C) if c != label]
    buckets = np.empty(length, dtype=np.int64)
    pick = rng.uniform(size=length) < bias
    buckets[pick] = label
    if others:
        buckets[~pick] = np.asarray(others)[rng.integers(0, len(others), size=int((~pick).sum()))]
    else:
        buckets[:] = label
    return [int(members[b][rng.integers(0, len(members[b]))]) for b in buckets]


def synth_task(
    task: str,
    n: int,
    rng: Rng,
    vocab_size: int = 32,
    seq_len: int = 24,
    num_classes: int = 2,
    class_balance=None,
    majority_bias: float = 0.7,
) -> list[SequenceRecord]:
    """Generate ``n`` labelled sequences.

    Labels are drawn from ``class_balance`` (uniform by default), then a
    sequence with that label is sampled.  For ``majority`` tokens come from
    the label's bucket with probability ``majority_bias`` and sequences are
    redrawn until the majority rule yields the drawn label.  For
    ``copy-class`` the first token comes from the label's bucket and the rest
    are uniform.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if n < 0 or seq_len < 1:
        raise ValueError("n must be >= 0 and seq_len >= 1")
    buckets = token_buckets(vocab_size, num_classes)
    members = [np.flatnonzero(buckets == c) for c in range(num_classes)]
    p = np.full(num_classes, 1.0 / num_classes) if class_balance is None else np.asarray(class_balance, float)
    if p.shape != (num_classes,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
        raise ValueError("class_balance must be a probability vector of length num_classes")
    if task == "majority" and not 0.0 < majority_bias <= 1.0:
        raise ValueError("majority_bias must lie in (0, 1]")
    labels = rng.choice(num_classes, size=n, p=p)
    out = []
    for y in labels:
        y = int(y)
        if task == "copy-class":
            first = int(members[y][rng.integers(0, len(members[y]))])
            rest = rng.integers(0, vocab_size, size=seq_len - 1).tolist()
            tokens = [first, *rest]
        else:
            for _ in range(10_000):
                tokens = _sample_majority(rng, y, seq_len, members, majority_bias)
                if majority_label(tokens, buckets) == y:
                    break
            else:
                raise RuntimeError(f"could not sample a majority-{y} sequence; raise majority_bias")
        out.append(SequenceRecord(tuple(tokens), y))
    return out


def write_splits(out_dir, task: str, sizes: dict[str, int], seed: int, **kwargs) -> dict[str, Path]:
    """Write ``train/valid/test.jsonl`` splits drawn from independent seeded streams."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(seed)
    paths = {}
    for i, split in enumerate(("train", "valid", "test")):
        recs = synth_task(task, sizes[split], root.spawn(i), **kwargs)
        paths[split] = out_dir / f"{split}.jsonl"
        write_jsonl(paths[split], recs)
    return paths
