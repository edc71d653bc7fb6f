"""Two-layer ReLU networks fitted so that ``q(X) k(Y)^T / scale`` matches a target matrix.

Both the approximation lab and kernel-machine distillation train a pair of
small networks against a dense grid target.  The forward and backward
passes are written directly in numpy; they are checked against the
autodiff engine in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import NonFiniteError, Rng


@dataclass
class TwoLayerNet:
    """``x -> W2 relu(W1 x + b1) + b2`` with a hidden trunk shared by all outputs."""

    w1: np.ndarray  # [m, d_in]
    b1: np.ndarray  # [m]
    w2: np.ndarray  # [d_out, m]
    b2: np.ndarray  # [d_out]

    @classmethod
    def init(cls, rng: Rng, d_in: int, m: int, d_out: int, low=0.0, high=1.0) -> "TwoLayerNet":
        """Random init with ReLU hinges placed inside the input box ``[low, high]^d_in``."""
        if d_in < 1 or m < 1 or d_out < 1:
            raise ValueError(f"need d_in, m, d_out >= 1, got {d_in}, {m}, {d_out}")
        w1 = rng.normal(0.0, 1.0, size=(m, d_in)) / math.sqrt(d_in)
        centres = rng.uniform(low, high, size=(m, d_in))
        b1 = -np.sum(w1 * centres, axis=1)
        w2 = rng.normal(0.0, 1.0, size=(d_out, m)) / math.sqrt(m)
        return cls(w1, b1, w2, np.zeros(d_out))

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Outputs ``[n, d_out]`` and the pre-activation cache."""
        a = x @ self.w1.T + self.b1
        return np.maximum(a, 0.0) @ self.w2.T + self.b2, a

    def __call__(self, x) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64))[0]

    def backward(self, x: np.ndarray, a: np.ndarray, gy: np.ndarray) -> list[np.ndarray]:
        h = np.maximum(a, 0.0)
        ga = (gy @ self.w2) * (a > 0)
        return [ga.T @ x, ga.sum(axis=0), gy.T @ h, gy.sum(axis=0)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("w1", "b1", "w2", "b2")}


def pair_loss_and_grads(qnet: TwoLayerNet, knet: TwoLayerNet, x, y, target, scale: float = 1.0):
    """Mean squared error of ``q(x) k(y)^T / scale`` against ``target`` and its gradients."""
    Q, aq = qnet.forward(x)
    K, ak = knet.forward(y)
    R = Q @ K.T / scale - target
    loss = float(np.mean(R * R))
    gP = 2.0 * R / R.size / scale
    gq = qnet.backward(x, aq, gP @ K)
    gk = knet.backward(y, ak, gP.T @ Q)
    return loss, gq, gk


@dataclass(frozen=True)
class FitOptions:
    steps: int = 10000
    lr: float = 1e-2
    final_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    polish_sweeps: int = 0


def _refit_output(net: TwoLayerNet, x, other: np.ndarray, target: np.ndarray, scale: float) -> None:
    # least-squares output layer: min |[h 1] W other^T / scale - target|, W = [w2^T; b2]
    _, a = net.forward(x)
    A = np.hstack([np.maximum(a, 0.0), np.ones((len(x), 1))])
    W = scale * np.linalg.pinv(A, rcond=1e-10) @ target @ np.linalg.pinv(other.T, rcond=1e-10)
    net.w2[...] = W[:-1].T
    net.b2[...] = W[-1]


def polish_output_layers(qnet, knet, x, y, target, sweeps: int, scale: float = 1.0) -> list[float]:
    """Alternating exact least-squares refits of the two output layers, hidden layers fixed.

    Each half-sweep minimizes the loss over one output layer, so the loss
    never increases.  Returns the loss after every sweep.
    """
    losses = []
    for _ in range(sweeps):
        _refit_output(qnet, x, knet(y), target, scale)
        _refit_output(knet, y, qnet(x), target.T, scale)
        losses.append(pair_loss_and_grads(qnet, knet, x, y, target, scale)[0])
    return losses


def fit_pair(qnet, knet, x, y, target, opts: FitOptions, scale: float = 1.0) -> list[float]:
    """Full-batch Adam with a geometric learning-rate decay from ``lr`` to ``final_lr``.

    With ``opts.polish_sweeps > 0`` the Adam phase is followed by that many
    sweeps of :func:`polish_output_layers`.  Returns the loss trajectory;
    raises :class:`NonFiniteError` on divergence.
    """
    params = qnet.params() + knet.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    ratio = (opts.final_lr / opts.lr) ** (1.0 / max(opts.steps - 1, 1)) if opts.lr > 0 else 1.0
    losses = []
    for t in range(1, opts.steps + 1):
        loss, gq, gk = pair_loss_and_grads(qnet, knet, x, y, target, scale)
        if not math.isfinite(loss):
            raise NonFiniteError(f"loss became {loss} at step {t}; lower the learning rate")
        losses.append(loss)
        lr = opts.lr * ratio ** (t - 1)
        c1 = 1.0 - opts.beta1**t
        c2 = 1.0 - opts.beta2**t
        for i, (p, g) in enumerate(zip(params, gq + gk)):
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * (g * g)
            p -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + opts.eps)
    if opts.polish_sweeps:
        losses.extend(polish_output_layers(qnet, knet, x, y, target, opts.polish_sweeps, scale))
    return losses
