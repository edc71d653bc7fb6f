"""Attention kernels behind one interface, Gram evaluation and row normalization."""

from . import _backend
from .catalog import KernelContractError, cross_gram, gram, kernel_eval, normalize_rows
from .spec import (
    EDP,
    EXP_INTERSECTION,
    KINDS,
    L2,
    QUADRATIC,
    RBF,
    KernelConfigError,
    KernelSpec,
    check_kind,
)

BACKEND = _backend.NAME

__all__ = [
    "BACKEND",
    "EDP",
    "EXP_INTERSECTION",
    "KINDS",
    "L2",
    "QUADRATIC",
    "RBF",
    "KernelConfigError",
    "KernelContractError",
    "KernelSpec",
    "check_kind",
    "cross_gram",
    "gram",
    "kernel_eval",
    "normalize_rows",
]
