from __future__ import annotations

import numpy as np

from ..numcore import Tensor


class Adam:
    """Bias-corrected Adam over a fixed list of leaf tensors."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            if lr == 0.0:
                continue
            update = lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.assign_(p.data - update)


def warmup_lr(step: int, peak: float, warmup_steps: int, start: float = 1e-7) -> float:
    """Linear ramp from ``min(start, peak)`` at step 0 to ``peak`` at ``warmup_steps``."""
    start = min(start, peak)
    if warmup_steps <= 0 or step >= warmup_steps:
        return peak
    return start + (peak - start) * step / warmup_steps
