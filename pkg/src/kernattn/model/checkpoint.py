"""Binary checkpoints: magic, JSON header, raw little-endian float64 blobs.

Layout::

    b"KATNCKPT" | uint64 LE header length | UTF-8 JSON header | blobs

The header records the encoder config, seed, step and the name and shape
of every parameter in declaration order; blobs follow in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..numcore import Rng
from .config import EncoderConfig, strict_from_dict
from .encoder import EncoderClassifier

MAGIC = b"KATNCKPT"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: EncoderClassifier, seed: int, step: int, extra: dict | None = None) -> None:
    params = model.parameters()
    header = {
        "config": model.cfg.to_dict(),
        "seed": int(seed),
        "step": int(step),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for v in params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a kernattn checkpoint")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    offset = 16 + n
    arrays = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - offset} trailing bytes")
    return header, arrays


def load_checkpoint(path, expect: EncoderConfig | None = None) -> tuple[EncoderClassifier, dict]:
    """Rebuild the model stored at ``path``.

    ``expect`` guards against config mismatch with the caller's settings.
    """
    header, arrays = read_checkpoint(path)
    cfg = strict_from_dict(EncoderConfig, header["config"])
    if expect is not None and expect != cfg:
        raise CheckpointError("checkpoint config does not match the requested model config")
    model = EncoderClassifier(cfg, Rng(0))
    params = model.parameters()
    if list(params) != list(arrays):
        raise CheckpointError("checkpoint parameter list does not match the model layout")
    for name, p in params.items():
        p.assign_(arrays[name])
    return model, header
