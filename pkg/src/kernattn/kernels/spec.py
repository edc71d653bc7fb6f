from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import Tensor

EDP = "edp"
RBF = "rbf"
L2 = "l2"
EXP_INTERSECTION = "exp_intersection"
QUADRATIC = "quadratic"

KINDS = (EDP, RBF, L2, EXP_INTERSECTION, QUADRATIC)
TAU_KINDS = (RBF, L2)
GAMMA_KINDS = (QUADRATIC,)

# integer codes shared with the compiled backend
KIND_CODES = {EDP: 0, RBF: 1, L2: 2, EXP_INTERSECTION: 3, QUADRATIC: 4}


class KernelConfigError(ValueError):
    """Unknown kernel name or inconsistent kernel parameters."""


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise KernelConfigError(f"unknown kernel {kind!r}; expected one of {', '.join(KINDS)}")
    return kind


@dataclass(frozen=True)
class KernelSpec:
    """One attention kernel plus its learned scalars.

    ``theta_tau`` parameterizes the bandwidth as ``tau = exp(theta_tau)`` and
    exists only for ``rbf`` and ``l2``; ``gamma`` exists only for
    ``quadratic``.  Both are 0-d tensors so gradients can flow into them.
    """

    kind: str
    head_dim: int
    theta_tau: Tensor | None = None
    gamma: Tensor | None = None

    def __post_init__(self):
        check_kind(self.kind)
        if int(self.head_dim) < 1:
            raise KernelConfigError(f"head_dim must be positive, got {self.head_dim}")
        if (self.theta_tau is not None) != (self.kind in TAU_KINDS):
            raise KernelConfigError(f"theta_tau must be given iff kind is one of {TAU_KINDS}")
        if (self.gamma is not None) != (self.kind in GAMMA_KINDS):
            raise KernelConfigError(f"gamma must be given iff kind is one of {GAMMA_KINDS}")
        for name in ("theta_tau", "gamma"):
            value = getattr(self, name)
            if value is not None and (value.shape != () or not np.isfinite(value.data)):
                raise KernelConfigError(f"{name} must be a finite scalar")

    @classmethod
    def make(
        cls,
        kind: str,
        head_dim: int,
        theta_tau: float = 0.0,
        gamma: float = 0.0,
        requires_grad: bool = False,
    ) -> "KernelSpec":
        """Build a spec, attaching only the scalars that ``kind`` uses."""
        check_kind(kind)
        tt = Tensor(theta_tau, requires_grad=requires_grad) if kind in TAU_KINDS else None
        gm = Tensor(gamma, requires_grad=requires_grad) if kind in GAMMA_KINDS else None
        return cls(kind, int(head_dim), tt, gm)

    @property
    def tau(self) -> float | None:
        return None if self.theta_tau is None else float(np.exp(self.theta_tau.data))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "head_dim": self.head_dim}
        if self.theta_tau is not None:
            out["theta_tau"] = float(self.theta_tau.data)
        if self.gamma is not None:
            out["gamma"] = float(self.gamma.data)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        extra = set(d) - {"kind", "head_dim", "theta_tau", "gamma"}
        if extra:
            raise KernelConfigError(f"unknown kernel fields: {sorted(extra)}")
        return cls.make(d["kind"], d["head_dim"], d.get("theta_tau", 0.0), d.get("gamma", 0.0))
