"""Central finite-difference check of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad


@dataclass
class GradCheckReport:
    """Outcome of :func:`grad_check`.

    ``max_rel_errors[i]`` is the worst entry of parameter ``i`` under the
    relative error ``|ga - gf| / max(1, |ga|, |gf|)``.
    """

    max_rel_errors: list[float]
    tol: float
    step: float
    analytic: list[np.ndarray] = field(repr=False)
    numeric: list[np.ndarray] = field(repr=False)

    @property
    def max_error(self) -> float:
        return max(self.max_rel_errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def relative_error(ga, gf) -> np.ndarray:
    ga = np.asarray(ga, dtype=np.float64)
    gf = np.asarray(gf, dtype=np.float64)
    return np.abs(ga - gf) / np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gf)))


def grad_check(
    f: Callable[..., Tensor],
    at: Sequence,
    step: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*at)`` with central differences.

    Each entry of ``at`` is treated as a free parameter.  ``f`` must return a
    single-element tensor.
    """
    points = [np.array(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in at]

    leaves = [Tensor(p, requires_grad=True) for p in points]
    out = f(*leaves)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    if not np.isfinite(out.item()):
        raise NonFiniteError("function is non-finite at the base point")
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]

    numeric = []
    with no_grad():
        for i, p in enumerate(points):
            g = np.zeros(p.shape)
            for idx in np.ndindex(p.shape):
                vals = []
                for sign in (1.0, -1.0):
                    moved = p.copy()
                    moved[idx] += sign * step
                    args = [Tensor(moved) if j == i else Tensor(q) for j, q in enumerate(points)]
                    v = f(*args).item()
                    if not np.isfinite(v):
                        raise NonFiniteError(
                            f"non-finite value at parameter {i}, entry {idx}, perturbation {sign * step:+g}"
                        )
                    vals.append(v)
                g[idx] = (vals[0] - vals[1]) / (2.0 * step)
            numeric.append(g)

    errors = [float(relative_error(a, n).max(initial=0.0)) for a, n in zip(analytic, numeric)]
    return GradCheckReport(errors, tol, step, analytic, numeric)
