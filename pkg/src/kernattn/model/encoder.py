"""Pre-norm Transformer encoder classifier with a pluggable attention kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attention import AttentionLayerParams, attend
from ..numcore import (
    DimensionError,
    NonFiniteError,
    Rng,
    Tensor,
    broadcast_to,
    getitem,
    matmul,
    reduce,
    relu,
    sqrt,
    square,
    take_rows,
    transpose,
    uniform_init,
)
from .config import EncoderConfig

LN_EPS = 1e-5


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of ``x``."""
    y = matmul(x, transpose(w))
    return y if b is None else y + broadcast_to(b, y.shape)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = broadcast_to(reduce("mean", x, -1, keepdims=True), x.shape)
    xc = x - mu
    var = reduce("mean", square(xc), -1, keepdims=True)
    inv = broadcast_to(1.0 / sqrt(var + eps), x.shape)
    return xc * inv * broadcast_to(gain, x.shape) + broadcast_to(bias, x.shape)


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionLayerParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    @classmethod
    def init(cls, rng: Rng, cfg: EncoderConfig) -> "BlockParams":
        D, F = cfg.d_model, cfg.ffn_hidden
        attn = AttentionLayerParams.init(
            rng, cfg.kernel, cfg.num_heads, cfg.head_dim, D, D, D,
            theta_tau=cfg.theta_tau_init, gamma=cfg.gamma_init,
            zero_output=cfg.zero_init_residual,
        )
        fc2 = np.zeros((D, F)) if cfg.zero_init_residual else uniform_init(rng, (D, F), F)
        return cls(
            _param(np.ones(D)), _param(np.zeros(D)), attn,
            _param(np.ones(D)), _param(np.zeros(D)),
            _param(uniform_init(rng, (F, D), D)), _param(np.zeros(F)),
            _param(fc2), _param(np.zeros(D)),
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {"ln1.gain": self.ln1_gain, "ln1.bias": self.ln1_bias}
        out.update({f"attn.{k}": v for k, v in self.attn.parameters().items()})
        out.update({
            "ln2.gain": self.ln2_gain, "ln2.bias": self.ln2_bias,
            "fc1.w": self.fc1_w, "fc1.b": self.fc1_b,
            "fc2.w": self.fc2_w, "fc2.b": self.fc2_b,
        })
        return out


def encoder_block(params: BlockParams, x: Tensor, pad_mask=None, layer: int = 0) -> Tensor:
    """One pre-norm block: LN -> attention -> ReLU -> residual, LN -> FC -> ReLU -> FC -> ReLU -> residual."""
    h = layer_norm(x, params.ln1_gain, params.ln1_bias)
    x = x + relu(attend(params.attn, h, h, pad_mask))
    h = layer_norm(x, params.ln2_gain, params.ln2_bias)
    h = relu(linear(h, params.fc1_w, params.fc1_b))
    x = x + relu(linear(h, params.fc2_w, params.fc2_b))
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite activations after encoder layer {layer}")
    return x


class EncoderClassifier:
    """Token + learned position embeddings, pre-norm blocks, masked mean pooling, two-layer head."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self.cfg = cfg
        D = cfg.d_model
        self.embed = _param(rng.normal(0.0, 1.0, size=(cfg.vocab_size, D)))
        self.pos = _param(rng.normal(0.0, 0.1, size=(cfg.max_seq_len, D)))
        self.blocks = [BlockParams.init(rng, cfg) for _ in range(cfg.num_layers)]
        self.head_w1 = _param(uniform_init(rng, (cfg.head_hidden, D), D))
        self.head_b1 = _param(np.zeros(cfg.head_hidden))
        self.head_w2 = _param(uniform_init(rng, (cfg.num_classes, cfg.head_hidden), cfg.head_hidden))
        self.head_b2 = _param(np.zeros(cfg.num_classes))

    def parameters(self) -> dict[str, Tensor]:
        """All parameters in declaration order."""
        out = {"embed": self.embed, "pos": self.pos}
        for i, block in enumerate(self.blocks):
            out.update({f"layers.{i}.{k}": v for k, v in block.parameters().items()})
        out.update({
            "head.w1": self.head_w1, "head.b1": self.head_b1,
            "head.w2": self.head_w2, "head.b2": self.head_b2,
        })
        return out

    def embed_tokens(self, tokens: np.ndarray) -> Tensor:
        B, L = tokens.shape
        if L > self.cfg.max_seq_len:
            raise DimensionError(f"sequence length {L} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = take_rows(self.embed, tokens)
        return x + broadcast_to(getitem(self.pos, slice(0, L)), x.shape)

    def pool_and_head(self, x: Tensor, mask: np.ndarray) -> Tensor:
        m = mask.astype(np.float64)
        weights = Tensor(np.broadcast_to((m / m.sum(axis=1, keepdims=True))[:, :, None], x.shape))
        pooled = reduce("sum", x * weights, 1)
        h = relu(linear(pooled, self.head_w1, self.head_b1))
        return linear(h, self.head_w2, self.head_b2)

    def forward(self, tokens, mask=None) -> Tensor:
        """Class logits ``[B, num_classes]`` for a padded batch ``tokens[B, L]``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise DimensionError(f"tokens must be [B, L], got shape {tokens.shape}")
        mask = np.ones(tokens.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != tokens.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match tokens {tokens.shape}")
        if not np.all(mask.any(axis=1)):
            raise ValueError("every sequence needs at least one non-pad token")
        x = self.embed_tokens(tokens)
        for i, block in enumerate(self.blocks):
            x = encoder_block(block, x, mask, layer=i)
        return self.pool_and_head(x, mask)


def classify(model: EncoderClassifier, token_ids, pad_mask=None) -> Tensor:
    """Logits ``[num_classes]`` for one sequence; ``pad_mask`` marks real tokens."""
    tokens = np.asarray(token_ids, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("classify needs a non-empty 1-D token sequence")
    mask = None if pad_mask is None else np.asarray(pad_mask, dtype=bool)[None, :]
    logits = model.forward(tokens[None, :], mask)
    return logits.reshape(logits.shape[1])


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits[B, C]``."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - broadcast_to(shift, logits.shape)
    lse = (z.exp().sum(axis=1)).log()
    picked = getitem(z, (np.arange(B), labels))
    return reduce("mean", lse - picked)
