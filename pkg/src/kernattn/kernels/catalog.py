"""Kernel evaluation, cross Gram matrices and row normalization."""

from __future__ import annotations

import math

import numpy as np

from ..numcore import DimensionError, Tensor, as_tensor, exp, minimum, reduce, square
from ..numcore.tensor import make_op as _op
from . import _backend
from .spec import EDP, EXP_INTERSECTION, KIND_CODES, L2, QUADRATIC, RBF, TAU_KINDS, KernelSpec, check_kind


class KernelContractError(ValueError):
    """A kernel matrix violated the non-negativity or masking contract."""


def kernel_eval(spec: KernelSpec, q, k) -> Tensor:
    """Evaluate ``spec`` at one query/key pair, returning a 0-d tensor.

    Built from elementwise tensor ops, so it is differentiable wrt ``q``,
    ``k`` and the spec's scalars independently of :func:`cross_gram`.
    """
    q = as_tensor(q)
    k = as_tensor(k)
    d = spec.head_dim
    if q.shape != (d,) or k.shape != (d,):
        raise DimensionError(f"kernel_eval expects vectors of length {d}, got {q.shape} and {k.shape}")
    inv = 1.0 / math.sqrt(d)
    if spec.kind == EDP:
        return exp(reduce("sum", q * k) * inv)
    if spec.kind == QUADRATIC:
        return square(reduce("sum", q * k) * inv + spec.gamma)
    if spec.kind == EXP_INTERSECTION:
        return exp(reduce("sum", minimum(q, k)))
    tau = exp(spec.theta_tau)
    sq = reduce("sum", square(q - k))
    if spec.kind == RBF:
        return exp(-(tau * inv) * sq)
    return (tau * inv) * _norm(q - k)


def _norm(x: Tensor) -> Tensor:
    # Euclidean norm with gradient 0 at the origin, matching the gram backends
    r = float(np.sqrt(np.sum(x.data * x.data)))

    def backward(g):
        return (g * x.data / r if r > 0 else np.zeros_like(x.data),)

    return _op(np.asarray(r), (x,), backward)


def gram(kind: str, Q, K, head_dim: int, param=None) -> Tensor:
    """Batched cross Gram ``[..., T, S]`` from ``Q[..., T, d]`` and ``K[..., S, d]``.

    ``param`` is ``theta_tau`` for rbf/l2 and ``gamma`` for quadratic; it is
    either a scalar or carries exactly the leading (batch/head) axes of ``Q``.
    """
    check_kind(kind)
    Q = as_tensor(Q)
    K = as_tensor(K)
    if Q.ndim < 2 or K.ndim < 2:
        raise DimensionError(f"gram needs at least 2-D inputs, got {Q.shape} and {K.shape}")
    if Q.shape[:-2] != K.shape[:-2] or Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"gram shapes disagree: Q {Q.shape}, K {K.shape}")
    if Q.shape[-1] != head_dim:
        raise DimensionError(f"feature width {Q.shape[-1]} does not match head_dim {head_dim}")
    lead = Q.shape[:-2]
    T, d = Q.shape[-2:]
    S = K.shape[-2]
    G = int(np.prod(lead, dtype=np.int64))

    uses_param = kind in TAU_KINDS or kind == QUADRATIC
    if uses_param:
        if param is None:
            raise ValueError(f"kernel {kind!r} needs a parameter tensor")
        param = as_tensor(param)
        if param.shape not in ((), lead):
            raise DimensionError(f"kernel parameter shape {param.shape} must be () or {lead}")
        raw = np.exp(param.data) if kind in TAU_KINDS else param.data
        p = np.ascontiguousarray(np.broadcast_to(raw, lead).reshape(G), dtype=np.float64)
    else:
        p = np.zeros(G)

    code = KIND_CODES[kind]
    scale = 1.0 / math.sqrt(head_dim)
    q3 = np.ascontiguousarray(Q.data.reshape(G, T, d))
    k3 = np.ascontiguousarray(K.data.reshape(G, S, d))
    out = _backend.gram_forward(code, q3, k3, p, scale)
    out = np.asarray(out).reshape(*lead, T, S)

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(G, T, S))
        o3 = np.ascontiguousarray(out.reshape(G, T, S))
        dq, dk, dp = _backend.gram_backward(code, q3, k3, p, scale, o3, g3)
        grads = [np.asarray(dq).reshape(Q.shape), np.asarray(dk).reshape(K.shape)]
        if uses_param:
            dp = np.asarray(dp)
            if kind in TAU_KINDS:
                dp = dp * p  # chain through tau = exp(theta_tau)
            dp = dp.reshape(lead)
            grads.append(dp if param.shape == lead else np.asarray(dp.sum()))
        return grads

    parents = (Q, K, param) if uses_param else (Q, K)
    return _op(out, parents, backward)


def cross_gram(spec: KernelSpec, Q, K) -> Tensor:
    """Matrix of ``kernel_eval(spec, Q[i], K[j])`` for all pairs."""
    param = spec.theta_tau if spec.theta_tau is not None else spec.gamma
    Q = as_tensor(Q)
    K = as_tensor(K)
    if Q.ndim != 2 or K.ndim != 2:
        raise DimensionError(f"cross_gram expects matrices, got {Q.shape} and {K.shape}")
    return gram(spec.kind, Q, K, spec.head_dim, param)


def normalize_rows(kmat, mask=None, eps: float = 1e-12) -> Tensor:
    """Divide each row of a non-negative kernel matrix by its sum over valid entries.

    ``mask`` marks valid entries and is broadcast explicitly to the matrix
    shape.  Masked entries come out exactly 0.  A row whose valid sum is below
    ``eps`` gets uniform weights over its valid entries (and no gradient).
    """
    kmat = as_tensor(kmat)
    x = kmat.data
    if np.any(x < 0):
        raise KernelContractError("kernel matrix has negative entries")
    if np.any(np.isnan(x)):
        raise KernelContractError("kernel matrix has NaN entries")
    if mask is None:
        m = np.ones(x.shape, dtype=bool)
    else:
        try:
            m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        except ValueError:
            raise DimensionError(f"mask shape {np.shape(mask)} does not broadcast to {x.shape}") from None
    count = m.sum(axis=-1, keepdims=True)
    if np.any(count == 0):
        raise KernelContractError("a row has no unmasked entries")
    km = np.where(m, x, 0.0)
    total = km.sum(axis=-1, keepdims=True)
    degenerate = total < eps
    safe_total = np.where(degenerate, 1.0, total)
    out = np.where(degenerate, m / count, km / safe_total)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        grad = np.where(m, (g - inner) / safe_total, 0.0)
        return (np.where(degenerate, 0.0, grad),)

    return _op(out, (kmat,), backward)
