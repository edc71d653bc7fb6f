"""Pure-numpy gram kernels (fallback when the compiled extension is absent).

Arrays are float64 and shaped ``Q[G, T, d]``, ``K[G, S, d]``, ``param[G]``
where ``G`` is the flattened batch-by-head axis.  ``param`` is ``tau`` for
rbf/l2, ``gamma`` for quadratic and ignored otherwise.  ``scale`` is
``1/sqrt(head_dim)``.  The backward pass returns the gradient wrt ``tau``,
not ``theta_tau``.
"""

import numpy as np

EDP, RBF, L2, EXPINT, QUAD = range(5)


def _sqdist(Q, K):
    diff = Q[:, :, None, :] - K[:, None, :, :]
    return np.einsum("gtsd,gtsd->gts", diff, diff)


def _dot(Q, K):
    return Q @ K.transpose(0, 2, 1)


def gram_forward(kind, Q, K, param, scale):
    """Kernel matrix ``[G, T, S]``."""
    p = param[:, None, None]
    with np.errstate(over="ignore"):
        if kind == EDP:
            return np.exp(_dot(Q, K) * scale)
        if kind == RBF:
            return np.exp(-(p * scale) * _sqdist(Q, K))
        if kind == L2:
            return (p * scale) * np.sqrt(_sqdist(Q, K))
        if kind == EXPINT:
            return np.exp(np.minimum(Q[:, :, None, :], K[:, None, :, :]).sum(axis=-1))
        if kind == QUAD:
            s = _dot(Q, K) * scale + p
            return s * s
    raise ValueError(f"unknown kernel code {kind}")


def _distance_grads(c, Q, K):
    # d/dq of sum_ts c_ts * f(|q_t - k_s|) where c already holds f'/|.|
    dQ = c.sum(axis=2)[:, :, None] * Q - c @ K
    dK = c.sum(axis=1)[:, :, None] * K - c.transpose(0, 2, 1) @ Q
    return dQ, dK


def gram_backward(kind, Q, K, param, scale, out, gout):
    """Gradients ``(dQ, dK, dparam)`` of ``sum(gout * out)``."""
    p = param[:, None, None]
    G = Q.shape[0]
    if kind == EDP:
        w = gout * out * scale
        return w @ K, w.transpose(0, 2, 1) @ Q, np.zeros(G)
    if kind == RBF:
        d2 = _sqdist(Q, K)
        go = gout * out
        dQ, dK = _distance_grads(go * (-2.0 * scale) * p, Q, K)
        return dQ, dK, (go * (-scale) * d2).sum(axis=(1, 2))
    if kind == L2:
        r = np.sqrt(_sqdist(Q, K))
        safe = np.where(r > 0, r, 1.0)
        c = np.where(r > 0, gout * (p * scale) / safe, 0.0)
        dQ, dK = _distance_grads(c, Q, K)
        return dQ, dK, (gout * scale * r).sum(axis=(1, 2))
    if kind == EXPINT:
        w = (gout * out)[:, :, :, None]
        first = Q[:, :, None, :] <= K[:, None, :, :]
        dQ = (w * first).sum(axis=2)
        dK = (w * ~first).sum(axis=1)
        return dQ, dK, np.zeros(G)
    if kind == QUAD:
        w = 2.0 * gout * (_dot(Q, K) * scale + p)
        ws = w * scale
        return ws @ K, ws.transpose(0, 2, 1) @ Q, w.sum(axis=(1, 2))
    raise ValueError(f"unknown kernel code {kind}")
