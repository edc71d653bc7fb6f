"""Kernel machines on paired domains.

A response ``z_ij`` is observed for every pair of ``x_i`` (first domain) and
``y_j`` (second domain).  Predictions take the form

    z(x, y) = sum_ij C_ij kx(x, x_i) ky(y, y_j) = [Kx(x, X) C Ky(Y, y)]

with symmetric kernels on each domain.  ``C`` is either a full coefficient
matrix or the rank-1 product ``xi zeta^T``.  The regularized objective is

    J(C) = mean_ij (Kx C Ky - Z)_ij^2 + lam * <C, Kx C Ky>,   lam = lam_x + lam_y.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import EDP, KernelSpec, cross_gram
from .nets import FitOptions, TwoLayerNet, fit_pair
from .numcore import NonFiniteError, Rng, no_grad

EIG_TOL = 1e-10


class ExistenceError(ValueError):
    """The exact interpolation problem has no solution (rank-deficient Gram)."""


class NotPositiveSemidefinite(ValueError):
    pass


class DegenerateSubproblemWarning(RuntimeWarning):
    pass


def _matrix(a, name: str) -> np.ndarray:
    a = np.array(getattr(a, "data", a), dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class BinaryDataset:
    """Points ``xs[n_x, d_t]``, ``ys[n_y, d_s]`` and responses ``Z[n_x, n_y]``."""

    xs: np.ndarray
    ys: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        xs, ys, Z = _matrix(self.xs, "xs"), _matrix(self.ys, "ys"), _matrix(self.Z, "Z")
        if Z.shape != (len(xs), len(ys)):
            raise ValueError(f"Z must be [{len(xs)}, {len(ys)}] to cover every pair, got {Z.shape}")
        if len(xs) == 0 or len(ys) == 0:
            raise ValueError("both domains need at least one point")
        for name, a in (("xs", xs), ("ys", ys), ("Z", Z)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def N(self) -> int:
        return self.Z.size

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "Z": self.Z.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryDataset":
        if set(d) != {"xs", "ys", "Z"}:
            raise ValueError(f"binary dataset needs exactly the fields xs, ys, Z; got {sorted(d)}")
        return cls(d["xs"], d["ys"], d["Z"])

    @classmethod
    def load(cls, path) -> "BinaryDataset":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")


def default_kernel(dim: int) -> KernelSpec:
    return KernelSpec.make(EDP, dim)


def gram_matrix(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Plain-array cross Gram ``[kernel(A_i, B_j)]``."""
    with no_grad():
        return np.array(cross_gram(spec, A, A if B is None else B).data)


@dataclass(frozen=True)
class BinaryKernelModel:
    """Fitted predictor; ``mode`` is ``"full"`` (matrix ``C``) or ``"rank1"`` (``xi``, ``zeta``)."""

    kernel_x: KernelSpec
    kernel_y: KernelSpec
    xs: np.ndarray
    ys: np.ndarray
    mode: str
    C: np.ndarray | None = None
    xi: np.ndarray | None = None
    zeta: np.ndarray | None = None
    lambda_x: float = 0.0
    lambda_y: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in ("full", "rank1"):
            raise ValueError(f"mode must be 'full' or 'rank1', got {self.mode!r}")
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ValueError("regularization weights must be >= 0")
        nx, ny = len(self.xs), len(self.ys)
        if self.mode == "full":
            if self.C is None or np.shape(self.C) != (nx, ny):
                raise ValueError(f"full mode needs C of shape ({nx}, {ny})")
            coeffs = [self.C]
        else:
            if self.xi is None or self.zeta is None or np.shape(self.xi) != (nx,) or np.shape(self.zeta) != (ny,):
                raise ValueError(f"rank1 mode needs xi[{nx}] and zeta[{ny}]")
            coeffs = [self.xi, self.zeta]
        if not all(np.all(np.isfinite(c)) for c in coeffs):
            raise NonFiniteError("model coefficients are not finite")

    @property
    def coefficients(self) -> np.ndarray:
        return self.C if self.mode == "full" else np.outer(self.xi, self.zeta)

    def predict(self, x=None, y=None) -> np.ndarray:
        """Predictions ``[len(x), len(y)]``; defaults to the support points."""
        x = self.xs if x is None else _matrix(x, "x")
        y = self.ys if y is None else _matrix(y, "y")
        kx = gram_matrix(self.kernel_x, x, self.xs)
        ky = gram_matrix(self.kernel_y, y, self.ys)
        if self.mode == "rank1":
            return np.outer(kx @ self.xi, ky @ self.zeta)
        return kx @ self.C @ ky.T

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "kernel_x": self.kernel_x.to_dict(),
            "kernel_y": self.kernel_y.to_dict(),
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "lambda_x": self.lambda_x,
            "lambda_y": self.lambda_y,
        }
        if self.mode == "full":
            out["C"] = self.C.tolist()
        else:
            out["xi"] = self.xi.tolist()
            out["zeta"] = self.zeta.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryKernelModel":
        base = {"mode", "kernel_x", "kernel_y", "xs", "ys", "lambda_x", "lambda_y"}
        coef = {"C"} if d.get("mode") == "full" else {"xi", "zeta"}
        if set(d) != base | coef:
            raise ValueError(f"unexpected model fields: {sorted(set(d) ^ (base | coef))}")
        arrays = {k: np.array(d[k], dtype=np.float64) for k in coef}
        return cls(
            KernelSpec.from_dict(d["kernel_x"]),
            KernelSpec.from_dict(d["kernel_y"]),
            _matrix(d["xs"], "xs"),
            _matrix(d["ys"], "ys"),
            d["mode"],
            lambda_x=float(d["lambda_x"]),
            lambda_y=float(d["lambda_y"]),
            **arrays,
        )


def independence_check(K, tol: float = 1e-10) -> dict:
    """Whether the kernel sections behind Gram ``K`` are linearly independent.

    ``full_rank`` holds iff the smallest singular value exceeds
    ``tol`` times the largest.
    """
    K = _matrix(K, "Gram matrix")
    if K.shape[0] != K.shape[1]:
        raise ValueError(f"Gram matrix must be square, got {K.shape}")
    s = np.linalg.svd(K, compute_uv=False)
    smin, smax = float(s[-1]), float(s[0])
    return {"full_rank": bool(smin > tol * smax), "min_singular_value": smin}


def _kernels(data: BinaryDataset, kx, ky) -> tuple[KernelSpec, KernelSpec]:
    kx = default_kernel(data.xs.shape[1]) if kx is None else kx
    ky = default_kernel(data.ys.shape[1]) if ky is None else ky
    return kx, ky


def objective(Kx, Ky, Z, C, lam: float) -> float:
    """Mean squared residual plus ``lam * <C, Kx C Ky>``."""
    KCK = Kx @ C @ Ky
    return float(np.mean((KCK - Z) ** 2) + lam * np.sum(C * KCK))


def interpolate(data: BinaryDataset, kx: KernelSpec | None = None, ky: KernelSpec | None = None, tol: float = 1e-10):
    """Coefficients solving ``Kx C Ky = Z`` exactly."""
    kx, ky = _kernels(data, kx, ky)
    Kx, Ky = gram_matrix(kx, data.xs), gram_matrix(ky, data.ys)
    for side, K in (("x", Kx), ("y", Ky)):
        chk = independence_check(K, tol)
        if not chk["full_rank"]:
            raise ExistenceError(
                f"Gram matrix on the {side} side is rank deficient (min singular value "
                f"{chk['min_singular_value']:.3g}); no exact interpolant exists"
            )
    C = np.linalg.solve(Ky.T, np.linalg.solve(Kx, data.Z).T).T
    return BinaryKernelModel(kx, ky, data.xs, data.ys, "full", C=C, info={"objective": objective(Kx, Ky, data.Z, C, 0.0)})


def _psd_eigh(K: np.ndarray, side: str, tol: float) -> tuple[np.ndarray, np.ndarray]:
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    floor = -tol * max(1.0, float(np.max(np.abs(w))))
    if w[0] < floor:
        raise NotPositiveSemidefinite(
            f"Gram matrix on the {side} side has eigenvalue {w[0]:.3g} < {floor:.3g}; the kernel is not positive semidefinite"
        )
    return np.maximum(w, 0.0), V


def fit_regularized(
    data: BinaryDataset,
    kx: KernelSpec | None = None,
    ky: KernelSpec | None = None,
    lambda_x: float = 0.0,
    lambda_y: float = 0.0,
    loss: str = "square",
    tol: float = EIG_TOL,
) -> BinaryKernelModel:
    """Closed-form minimizer of the regularized square-loss objective.

    With ``Kx = U diag(a) U^T`` and ``Ky = V diag(b) V^T`` the objective
    separates in the rotated coefficients ``U^T C V``, giving
    ``(a_i b_j) / (a_i b_j + N lam)`` shrinkage per eigen-pair.  Pairs with
    ``a_i b_j = 0`` do not affect predictions and get zero coefficient.
    """
    if loss != "square":
        raise ValueError(f"only the square loss is supported, got {loss!r}")
    if lambda_x < 0 or lambda_y < 0:
        raise ValueError(f"regularization weights must be >= 0, got {lambda_x}, {lambda_y}")
    kx, ky = _kernels(data, kx, ky)
    Kx, Ky = gram_matrix(kx, data.xs), gram_matrix(ky, data.ys)
    a, U = _psd_eigh(Kx, "x", tol)
    b, V = _psd_eigh(Ky, "y", tol)
    lam = lambda_x + lambda_y
    ab = np.outer(a, b)
    Zt = U.T @ data.Z @ V
    live = ab > tol * max(1.0, float(ab.max()))
    Ct = np.zeros_like(Zt)
    Ct[live] = Zt[live] / (ab[live] + data.N * lam)
    C = U @ Ct @ V.T
    return BinaryKernelModel(
        kx, ky, data.xs, data.ys, "full", C=C, lambda_x=lambda_x, lambda_y=lambda_y,
        info={"objective": objective(Kx, Ky, data.Z, C, lam)},
    )


def _half_step(K: np.ndarray, Zv: np.ndarray, vv: float, beta: float, N: int, lam: float, side: str) -> np.ndarray:
    """Exact minimizer over one coefficient vector with the other held fixed.

    Solves ``((vv / N) K^2 + lam beta K) c = (1/N) K Zv``.
    """
    A = (vv / N) * (K @ K) + (lam * beta) * K
    rhs = (K @ Zv) / N
    if not np.any(rhs):
        return np.zeros(len(K))
    if np.linalg.cond(A) < 1e12:
        return np.linalg.solve(A, rhs)
    ridge = 1e-10 * max(float(np.trace(A)) / len(A), np.finfo(float).tiny)
    warnings.warn(
        f"singular normal matrix in the {side} update; using a ridge of {ridge:.3g}",
        DegenerateSubproblemWarning,
        stacklevel=3,
    )
    return np.linalg.solve(A + ridge * np.eye(len(A)), rhs)


def fit_rank1(
    data: BinaryDataset,
    kx: KernelSpec | None = None,
    ky: KernelSpec | None = None,
    lambda_x: float = 0.0,
    lambda_y: float = 0.0,
    max_iters: int = 200,
    tol: float = 1e-12,
) -> BinaryKernelModel:
    """Alternating exact minimization over ``xi`` and ``zeta`` with ``C = xi zeta^T``.

    Starts from constant vectors whose prediction matches ``mean(Z)`` (the
    sign goes on ``xi``), or the root-mean-square of ``Z`` when the mean is
    zero.  ``info["history"]`` holds the objective after every half-step.
    """
    if lambda_x < 0 or lambda_y < 0:
        raise ValueError(f"regularization weights must be >= 0, got {lambda_x}, {lambda_y}")
    kx, ky = _kernels(data, kx, ky)
    Kx, Ky = gram_matrix(kx, data.xs), gram_matrix(ky, data.ys)
    Z, N, lam = data.Z, data.N, lambda_x + lambda_y
    nx, ny = Z.shape

    target = float(np.mean(Z))
    if target == 0.0:
        target = float(np.sqrt(np.mean(Z * Z)))
    scale_x, scale_y = float(np.mean(Kx.sum(axis=1))), float(np.mean(Ky.sum(axis=1)))
    denom = scale_x * scale_y
    c = math.sqrt(abs(target) / denom) if denom > 0 else 1.0
    xi = np.full(nx, math.copysign(c, target) if target else 0.0)
    zeta = np.full(ny, c if target else 0.0)

    def J(xi, zeta):
        return objective(Kx, Ky, Z, np.outer(xi, zeta), lam)

    history = [J(xi, zeta)]
    iters = 0
    for iters in range(1, max_iters + 1):
        v = Ky @ zeta
        xi = _half_step(Kx, Z @ v, float(v @ v), float(zeta @ v), N, lam, "x")
        history.append(J(xi, zeta))
        u = Kx @ xi
        zeta = _half_step(Ky, Z.T @ u, float(u @ u), float(xi @ u), N, lam, "y")
        history.append(J(xi, zeta))
        prev, cur = history[-3], history[-1]
        if prev - cur <= tol * max(prev, np.finfo(float).tiny):
            break
    return BinaryKernelModel(
        kx, ky, data.xs, data.ys, "rank1", xi=xi, zeta=zeta, lambda_x=lambda_x, lambda_y=lambda_y,
        info={"objective": history[-1], "iterations": iters, "history": history},
    )


@dataclass
class DistillResult:
    q_net: TwoLayerNet
    k_net: TwoLayerNet
    dh: int
    sup_error: float
    mean_error: float
    train_loss: float
    log_shift: float
    log_scale: float

    def predict(self, x, y) -> np.ndarray:
        """``exp(q(x) k(y)^T / sqrt(dh))`` in the (possibly normalized) target units."""
        return np.exp(self.q_net(x) @ self.k_net(y).T / math.sqrt(self.dh))


def _log_target(model: BinaryKernelModel, x, y, where: str) -> np.ndarray:
    z = model.predict(x, y)
    if np.any(z <= 0):
        i, j = np.argwhere(z <= 0)[0]
        raise ValueError(
            f"model output {z[i, j]:.3g} at {where} point ({i}, {j}) is not positive; "
            "its logarithm is undefined, so it is not an exponentiated-kernel target"
        )
    return np.log(z)


def distill(
    model: BinaryKernelModel,
    x_grid,
    y_grid,
    dh: int,
    m: int,
    opts: FitOptions | None = None,
    seed: int = 0,
    x_eval=None,
    y_eval=None,
    normalize: bool = False,
) -> DistillResult:
    """Fit ``q, k`` so that ``exp(q(x) k(y)^T / sqrt(dh))`` reproduces the model.

    The networks are trained on ``log z`` over the product grid
    ``x_grid x y_grid`` and scored on ``x_eval x y_eval`` (the training grid
    if not given).  With ``normalize`` the log target is mapped affinely onto
    ``[-1, 1]`` using its range on the training grid, so outputs and errors
    live in ``[1/e, e]``.
    """
    if dh < 1 or m < 1:
        raise ValueError(f"need dh >= 1 and m >= 1, got dh={dh}, m={m}")
    x_grid, y_grid = _matrix(x_grid, "x_grid"), _matrix(y_grid, "y_grid")
    x_eval = x_grid if x_eval is None else _matrix(x_eval, "x_eval")
    y_eval = y_grid if y_eval is None else _matrix(y_eval, "y_eval")
    target = _log_target(model, x_grid, y_grid, "grid")
    held = _log_target(model, x_eval, y_eval, "evaluation")
    shift, scale = 0.0, 1.0
    if normalize:
        lo, hi = float(target.min()), float(target.max())
        shift, scale = 0.5 * (lo + hi), (0.5 * (hi - lo) if hi > lo else 1.0)
    target = (target - shift) / scale
    held = (held - shift) / scale

    rng = Rng(seed)
    lo_x, hi_x = x_grid.min(axis=0), x_grid.max(axis=0)
    lo_y, hi_y = y_grid.min(axis=0), y_grid.max(axis=0)
    qnet = TwoLayerNet.init(rng.spawn(0), x_grid.shape[1], m, dh, lo_x, hi_x)
    knet = TwoLayerNet.init(rng.spawn(1), y_grid.shape[1], m, dh, lo_y, hi_y)
    losses = fit_pair(qnet, knet, x_grid, y_grid, target, opts or FitOptions(), scale=math.sqrt(dh))
    res = DistillResult(qnet, knet, dh, 0.0, 0.0, losses[-1], shift, scale)
    err = np.abs(res.predict(x_eval, y_eval) - np.exp(held))
    res.sup_error, res.mean_error = float(err.max()), float(err.mean())
    return res
