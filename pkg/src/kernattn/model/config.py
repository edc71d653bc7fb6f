from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..kernels import check_kind


class ConfigError(ValueError):
    """Invalid or unknown configuration fields."""


def strict_from_dict(cls, data: dict):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} config must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder classifier shape; defaults follow the small two-layer sentiment model."""

    vocab_size: int = 32
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    head_dim: int = 16
    ffn_hidden: int = 128
    num_classes: int = 2
    kernel: str = "edp"
    theta_tau_init: float = 0.0
    gamma_init: float = 0.0
    max_seq_len: int = 64
    head_hidden: int = 64
    zero_init_residual: bool = False

    def __post_init__(self):
        check_kind(self.kernel)
        for name in ("vocab_size", "d_model", "num_layers", "num_heads", "head_dim",
                     "ffn_hidden", "num_classes", "max_seq_len", "head_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model != self.num_heads * self.head_dim:
            raise ConfigError(
                f"d_model ({self.d_model}) must equal num_heads * head_dim ({self.num_heads}*{self.head_dim})"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Adam with linear warmup, decay-on-plateau and early stopping."""

    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    warmup_start: float = 1e-7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    lr_decay_factor: float = 0.1
    decay_patience: int = 3
    patience: int = 8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0 <= b < 1:
                raise ConfigError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.warmup_steps < 0 or self.patience < 1 or self.decay_patience < 1:
            raise ConfigError("warmup_steps must be >= 0 and patience values >= 1")

    def to_dict(self) -> dict:
        return asdict(self)
