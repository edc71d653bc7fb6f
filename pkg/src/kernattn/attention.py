"""Multi-head attention with a pluggable kernel in place of exp(logit).

Per head ``h``: ``q_i = W^Q_h t_i``, ``k_j = W^K_h s_j``, weights
``alpha_ij = kappa(q_i, k_j) / sum_j kappa(q_i, k_j)`` over unmasked
sources, head output ``sum_j alpha_ij W^V_h s_j``.  Heads are concatenated
in head order and projected by ``W^O``.  With the ``edp`` kernel this is
ordinary scaled dot-product softmax attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, check_kind, gram, normalize_rows
from .kernels.spec import GAMMA_KINDS, TAU_KINDS
from .numcore import (
    DimensionError,
    NonFiniteError,
    Rng,
    Tensor,
    as_tensor,
    broadcast_to,
    matmul,
    reshape,
    transpose,
    uniform_init,
)


@dataclass
class AttentionLayerParams:
    """Projection weights and per-head kernel scalars of one attention layer.

    Shapes: ``w_q[H, d, d_t]``, ``w_k[H, d, d_s]``, ``w_v[H, d, d_s]``,
    ``w_o[d_model, H*d]``, ``theta_tau[H]`` (rbf, l2), ``gamma[H]`` (quadratic).
    """

    kind: str
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    theta_tau: Tensor | None = None
    gamma: Tensor | None = None

    def __post_init__(self):
        check_kind(self.kind)
        H, d, _ = self.w_q.shape
        if self.w_k.shape[:2] != (H, d) or self.w_v.shape != self.w_k.shape:
            raise DimensionError(
                f"projection shapes disagree: w_q {self.w_q.shape}, w_k {self.w_k.shape}, w_v {self.w_v.shape}"
            )
        if self.w_o.ndim != 2 or self.w_o.shape[1] != H * d:
            raise DimensionError(f"w_o must be [d_model, {H * d}], got {self.w_o.shape}")
        if (self.theta_tau is not None) != (self.kind in TAU_KINDS):
            raise ValueError(f"theta_tau must be given iff kind is one of {TAU_KINDS}")
        if (self.gamma is not None) != (self.kind in GAMMA_KINDS):
            raise ValueError(f"gamma must be given iff kind is one of {GAMMA_KINDS}")
        for name, p in self.parameters().items():
            if name in ("theta_tau", "gamma") and p.shape != (H,):
                raise DimensionError(f"{name} must have shape ({H},), got {p.shape}")
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError(f"attention parameter {name} is not finite")

    @classmethod
    def init(
        cls,
        rng: Rng,
        kind: str,
        num_heads: int,
        head_dim: int,
        d_t: int,
        d_s: int | None = None,
        d_model: int | None = None,
        theta_tau: float = 0.0,
        gamma: float = 0.0,
        zero_output: bool = False,
        check_rank: bool = True,
    ) -> "AttentionLayerParams":
        """Uniform(+-1/sqrt(fan_in)) initialization.

        ``check_rank`` enforces ``head_dim <= d_t, d_s`` and full-rank query
        and key projections per head; it is not re-checked after training.
        """
        check_kind(kind)
        d_s = d_t if d_s is None else d_s
        d_model = d_t if d_model is None else d_model
        H, d = num_heads, head_dim
        w_q = uniform_init(rng, (H, d, d_t), d_t)
        w_k = uniform_init(rng, (H, d, d_s), d_s)
        w_v = uniform_init(rng, (H, d, d_s), d_s)
        w_o = np.zeros((d_model, H * d)) if zero_output else uniform_init(rng, (d_model, H * d), H * d)
        params = cls(
            kind,
            Tensor(w_q, requires_grad=True),
            Tensor(w_k, requires_grad=True),
            Tensor(w_v, requires_grad=True),
            Tensor(w_o, requires_grad=True),
            Tensor(np.full(H, theta_tau), requires_grad=True) if kind in TAU_KINDS else None,
            Tensor(np.full(H, gamma), requires_grad=True) if kind in GAMMA_KINDS else None,
        )
        if check_rank and not projections_full_rank(params):
            raise ValueError(
                f"query/key projections must have rank head_dim={d} (need head_dim <= d_t={d_t}, d_s={d_s})"
            )
        return params

    @property
    def num_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_model(self) -> int:
        return self.w_o.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}
        if self.theta_tau is not None:
            out["theta_tau"] = self.theta_tau
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out

    def kernel_param(self) -> Tensor | None:
        return self.theta_tau if self.theta_tau is not None else self.gamma

    def head_spec(self, h: int) -> KernelSpec:
        tt = None if self.theta_tau is None else Tensor(self.theta_tau.data[h])
        gm = None if self.gamma is None else Tensor(self.gamma.data[h])
        return KernelSpec(self.kind, self.head_dim, tt, gm)


def projections_full_rank(params: AttentionLayerParams) -> bool:
    d = params.head_dim
    for w in (params.w_q.data, params.w_k.data):
        if d > w.shape[2]:
            return False
        if any(np.linalg.matrix_rank(w[h]) < d for h in range(w.shape[0])):
            return False
    return True


def _split_heads(x: Tensor, w: Tensor) -> Tensor:
    # x[B, N, D], w[H, d, D] -> [B, H, N, d]
    H, d, D = w.shape
    B, N, _ = x.shape
    y = matmul(x, transpose(reshape(w, (H * d, D))))
    return transpose(reshape(y, (B, N, H, d)), (0, 2, 1, 3))


def _prepare(params, targets, sources, pad_mask):
    t = as_tensor(targets)
    s = as_tensor(sources)
    batched = t.ndim == 3
    if t.ndim not in (2, 3) or s.ndim != t.ndim:
        raise DimensionError(f"targets/sources must both be [T, d] or [B, T, d], got {t.shape} and {s.shape}")
    if not batched:
        t = reshape(t, (1, *t.shape))
        s = reshape(s, (1, *s.shape))
    if t.shape[0] != s.shape[0]:
        raise DimensionError(f"batch sizes differ: {t.shape[0]} vs {s.shape[0]}")
    if t.shape[2] != params.w_q.shape[2] or s.shape[2] != params.w_k.shape[2]:
        raise DimensionError(
            f"input widths {t.shape[2]}, {s.shape[2]} do not match projections "
            f"{params.w_q.shape[2]}, {params.w_k.shape[2]}"
        )
    B, S = s.shape[0], s.shape[1]
    if S == 0:
        raise ValueError("attention needs at least one source")
    mask = None
    if pad_mask is not None:
        mask = np.asarray(pad_mask, dtype=bool)
        if mask.shape != ((B, S) if batched else (S,)):
            raise DimensionError(f"pad_mask shape {mask.shape} does not match sources {s.shape}")
        mask = mask.reshape(B, S)
        if not np.all(mask.any(axis=1)):
            raise ValueError("every source is masked; attention needs at least one unmasked source")
    return t, s, mask, batched


def _weights(params: AttentionLayerParams, t: Tensor, s: Tensor, mask) -> Tensor:
    B = t.shape[0]
    H, d = params.num_heads, params.head_dim
    Q = _split_heads(t, params.w_q)
    K = _split_heads(s, params.w_k)
    param = params.kernel_param()
    if param is not None:
        param = broadcast_to(param, (B, H))
    kmat = gram(params.kind, Q, K, d, param)
    bad = ~np.isfinite(kmat.data)
    if bad.any():
        b, h, i, j = (int(v) for v in np.argwhere(bad)[0])
        raise NonFiniteError(f"kernel value non-finite in head {h}, target {i}, source {j} (batch {b})")
    return normalize_rows(kmat, None if mask is None else mask[:, None, None, :])


def attention_weights(params: AttentionLayerParams, targets, sources, pad_mask=None) -> Tensor:
    """Attention weights ``[H, T, S]`` (``[B, H, T, S]`` for batched inputs)."""
    t, s, mask, batched = _prepare(params, targets, sources, pad_mask)
    alpha = _weights(params, t, s, mask)
    return alpha if batched else reshape(alpha, alpha.shape[1:])


def attend(params: AttentionLayerParams, targets, sources, pad_mask=None) -> Tensor:
    """Kernelized multi-head attention, ``[T, d_model]`` (or ``[B, T, d_model]``)."""
    t, s, mask, batched = _prepare(params, targets, sources, pad_mask)
    alpha = _weights(params, t, s, mask)
    V = _split_heads(s, params.w_v)
    B, H, T, _ = alpha.shape
    heads = matmul(alpha, V)  # [B, H, T, d]
    concat = reshape(transpose(heads, (0, 2, 1, 3)), (B, T, H * params.head_dim))
    out = matmul(concat, transpose(params.w_o))
    return out if batched else reshape(out, out.shape[1:])
