"""Regularized empirical risk for logistic / quadratic losses.

The objective over a retained index set ``S`` is

    L_S(theta) = sum_{i in S} l(<theta, x_i>, y_i) + (n * lam / 2) * ||theta||^2

where ``n`` is always the size of the *full* dataset: removing samples never
shrinks the regularizer.  Labels are stored in {0, 1}.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import (
    InvalidSubset,
    MaxIterExceeded,
    NumericalOverflow,
    SingularHessian,
)

LossKind = Literal["logistic", "quadratic"]
IndexLike = Union[None, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``features`` (n x d) and labels in {0, 1}."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs n >= 1 and d >= 1")
        if y.shape[0] != n:
            raise ValueError(f"{n} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be exactly 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_signed(cls, features, labels) -> "Dataset":
        """Build from labels in {-1, +1} (or already {0, 1}); -1 maps to 0."""
        y = np.asarray(labels, dtype=np.float64).copy()
        y[y == -1.0] = 0.0
        return cls(features, y)


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = "logistic"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("logistic", "quadratic"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")


@dataclass(frozen=True)
class FitConfig:
    grad_tol: float = 1e-10
    max_iter: int = 100
    damping: float = 1.0
    warm_start: Optional[np.ndarray] = None
    max_halvings: int = 50

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class FitReport:
    theta: np.ndarray
    final_grad_norm: float
    iterations: int
    converged: bool
    loss_history: tuple = field(default=(), repr=False)


def retained_indices(n: int, retained: IndexLike) -> np.ndarray:
    """Normalize ``retained`` (None = all, index list or boolean mask) to sorted indices."""
    if retained is None:
        return np.arange(n)
    idx = np.asarray(retained)
    if idx.dtype == bool:
        if idx.shape != (n,):
            raise InvalidSubset(f"boolean mask must have length {n}")
        return np.flatnonzero(idx)
    idx = idx.reshape(-1)
    if idx.size == 0:
        return np.zeros(0, dtype=np.intp)
    if not np.issubdtype(idx.dtype, np.integer):
        if not np.all(np.mod(idx, 1) == 0):
            raise InvalidSubset("indices must be integers")
        idx = idx.astype(np.intp)
    if idx.min() < 0 or idx.max() >= n:
        raise InvalidSubset(f"index out of range for n={n}")
    return np.unique(idx)


def complement(n: int, dropped: IndexLike) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[retained_indices(n, dropped)] = False
    return np.flatnonzero(mask)


def _margins(dataset: Dataset, theta, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (dataset.d,):
        raise ValueError(f"theta must have length {dataset.d}, got shape {theta.shape}")
    X = dataset.features[idx]
    y = dataset.labels[idx]
    return X, y, X @ theta


def residuals(loss_spec: LossSpec, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """alpha_i = d l / dz: sigmoid(z) - y, or z - y in quadratic mode."""
    if loss_spec.kind == "quadratic":
        return z - y
    return expit(z) - y


def curvatures(loss_spec: LossSpec, z: np.ndarray) -> np.ndarray:
    """beta_i = d^2 l / dz^2: sigmoid(z) * sigmoid(-z), or 1 in quadratic mode."""
    if loss_spec.kind == "quadratic":
        return np.ones_like(z)
    return expit(z) * expit(-z)


def third_coefficients(loss_spec: LossSpec, z: np.ndarray) -> np.ndarray:
    """d^3 l / dz^3 = beta * (1 - 2 sigmoid(z)); zero for the quadratic loss."""
    if loss_spec.kind == "quadratic":
        return np.zeros_like(z)
    # 1 - 2 sigmoid(z) = -tanh(z / 2), exact at z = 0
    return -expit(z) * expit(-z) * np.tanh(0.5 * z)


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalOverflow(f"non-finite {what}")
    return value


def loss(dataset: Dataset, loss_spec: LossSpec, theta, retained: IndexLike = None) -> float:
    idx = retained_indices(dataset.n, retained)
    X, y, z = _margins(dataset, theta, idx)
    if loss_spec.kind == "quadratic":
        per_sample = 0.5 * (z - y) ** 2
    else:
        # log(1 + e^z) - y z, stable for large |z|
        per_sample = np.logaddexp(0.0, z) - y * z
    theta = np.asarray(theta, dtype=np.float64)
    value = per_sample.sum() + 0.5 * dataset.n * loss_spec.lam * float(theta @ theta)
    return float(_check_finite(value, "loss"))


def gradient(dataset: Dataset, loss_spec: LossSpec, theta, retained: IndexLike = None) -> np.ndarray:
    idx = retained_indices(dataset.n, retained)
    X, y, z = _margins(dataset, theta, idx)
    g = X.T @ residuals(loss_spec, z, y) + dataset.n * loss_spec.lam * np.asarray(theta, dtype=np.float64)
    return _check_finite(g, "gradient")


def _weighted_gram(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    G = (X * w[:, None]).T @ X
    return 0.5 * (G + G.T)


def hessian(dataset: Dataset, loss_spec: LossSpec, theta, retained: IndexLike = None) -> np.ndarray:
    idx = retained_indices(dataset.n, retained)
    X, _, z = _margins(dataset, theta, idx)
    H = _weighted_gram(X, curvatures(loss_spec, z))
    H[np.diag_indices_from(H)] += dataset.n * loss_spec.lam
    return _check_finite(H, "hessian")


def third_directional(dataset: Dataset, loss_spec: LossSpec, theta, v, retained: IndexLike = None) -> np.ndarray:
    """Third-derivative tensor contracted once with ``v``: d/dt hessian(theta + t v) at t=0."""
    v = np.asarray(v, dtype=np.float64)
    if loss_spec.kind == "quadratic":
        return np.zeros((dataset.d, dataset.d))
    idx = retained_indices(dataset.n, retained)
    X, _, z = _margins(dataset, theta, idx)
    T = _weighted_gram(X, third_coefficients(loss_spec, z) * (X @ v))
    return _check_finite(T, "third derivative")


def cholesky(H: np.ndarray, what: str = "Hessian"):
    """Cholesky factor (scipy ``cho_factor`` tuple) or SingularHessian."""
    try:
        c, low = linalg.cho_factor(H, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularHessian(f"{what} is not positive definite") from exc
    diag = np.abs(np.diag(c))
    # cho_factor accepts semidefinite matrices whose zero pivots rounded to
    # ~sqrt(eps) * max; a pivot ratio of 1e-7 is a condition number of ~1e14
    if diag.min() <= 1e-7 * max(diag.max(), 1e-300):
        raise SingularHessian(f"{what} is numerically singular")
    return c, low


def fit(
    dataset: Dataset,
    loss_spec: LossSpec,
    config: Optional[FitConfig] = None,
    retained: IndexLike = None,
) -> FitReport:
    """Damped Newton with backtracking on the (retained) regularized loss.

    Steps are halved until the loss does not increase (up to a rounding
    allowance of 1e-13 relative).  Non-convergence is reported via
    ``converged=False`` plus a :class:`MaxIterExceeded` warning, never raised.
    """
    config = config or FitConfig()
    idx = retained_indices(dataset.n, retained)
    if loss_spec.lam == 0.0 and idx.size < dataset.d:
        raise SingularHessian(
            f"{idx.size} retained samples < d={dataset.d} with lambda=0; regularize or enlarge n"
        )
    theta = (
        np.zeros(dataset.d)
        if config.warm_start is None
        else np.array(config.warm_start, dtype=np.float64).reshape(-1)
    )
    if theta.shape != (dataset.d,):
        raise ValueError("warm_start has wrong length")

    f = loss(dataset, loss_spec, theta, idx)
    history = [f]
    steps = 0
    converged = False
    stalled = False
    while True:
        g = gradient(dataset, loss_spec, theta, idx)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.grad_tol:
            converged = True
            break
        if steps >= config.max_iter:
            break
        H = hessian(dataset, loss_spec, theta, idx)
        try:
            factor = cholesky(H)
        except SingularHessian:
            if steps == 0:
                raise
            # curvature vanished along the path (e.g. separable data at lambda=0)
            stalled = True
            break
        direction = linalg.cho_solve(factor, g)
        t = config.damping
        accepted = False
        for _ in range(config.max_halvings + 1):
            cand = theta - t * direction
            try:
                f_new = loss(dataset, loss_spec, cand, idx)
            except NumericalOverflow:
                f_new = np.inf
            if f_new <= f + 1e-13 * (1.0 + abs(f)):
                accepted = True
                break
            t *= 0.5
        steps += 1
        if not accepted:
            stalled = True
            break
        theta, f = cand, min(f, f_new)
        history.append(f_new)

    if not converged:
        reason = "line search stalled" if stalled else f"max_iter={config.max_iter} reached"
        warnings.warn(
            f"Newton solver did not reach grad_tol={config.grad_tol:g} ({reason}); "
            f"final gradient norm {gnorm:.3e}",
            MaxIterExceeded,
            stacklevel=2,
        )
    return FitReport(
        theta=theta,
        final_grad_norm=gnorm,
        iterations=steps,
        converged=converged,
        loss_history=tuple(history),
    )


def retrain_without(
    dataset: Dataset,
    loss_spec: LossSpec,
    dropset,
    config: Optional[FitConfig] = None,
    theta_hat=None,
    ns_estimate=None,
) -> FitReport:
    """Exact minimizer of the loss with ``dropset`` removed (the ground-truth oracle).

    The solver is warm-started at ``config.warm_start`` if set, else at
    ``ns_estimate``, else at ``theta_hat``, else at zero.
    """
    dropped = getattr(dropset, "indices", dropset)
    dropped = retained_indices(dataset.n, dropped)
    if dropped.size >= dataset.n:
        raise InvalidSubset("cannot drop every sample")
    config = config or FitConfig()
    if config.warm_start is None:
        start = ns_estimate if ns_estimate is not None else theta_hat
        if start is not None:
            start = getattr(start, "theta_est", start)
            config = FitConfig(
                grad_tol=config.grad_tol,
                max_iter=config.max_iter,
                damping=config.damping,
                warm_start=np.asarray(start, dtype=np.float64),
                max_halvings=config.max_halvings,
            )
    return fit(dataset, loss_spec, config, retained=complement(dataset.n, dropped))


@dataclass(frozen=True)
class ModelState:
    """Everything the estimators need at one parameter vector, factorized once."""

    dataset: Dataset
    loss_spec: LossSpec
    theta: np.ndarray
    retained: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    hessian: np.ndarray
    hessian_factor: tuple
    leverages: np.ndarray

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def grads(self) -> np.ndarray:
        """Per-sample gradients g_i = alpha_i x_i as an n x d array."""
        return self.alphas[:, None] * self.dataset.features

    def grad_sum(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp)
        return self.dataset.features[idx].T @ self.alphas[idx]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply H^{-1} using the cached factorization."""
        return linalg.cho_solve(self.hessian_factor, b)

    @property
    def covers_full_sample(self) -> bool:
        return self.retained.size == self.n


def build_state(dataset: Dataset, loss_spec: LossSpec, theta, retained: IndexLike = None) -> ModelState:
    theta = np.array(theta, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(theta)):
        raise NumericalOverflow("theta is not finite")
    idx = retained_indices(dataset.n, retained)
    X = dataset.features
    z = X @ theta
    alphas = residuals(loss_spec, z, dataset.labels)
    betas = curvatures(loss_spec, z)
    H = _weighted_gram(X[idx], betas[idx])
    H[np.diag_indices_from(H)] += dataset.n * loss_spec.lam
    _check_finite(H, "hessian")
    factor = cholesky(H)
    HinvXt = linalg.cho_solve(factor, X.T)
    leverages = betas * np.einsum("ij,ji->i", X, HinvXt)
    for arr in (theta, alphas, betas, H, leverages, idx):
        arr.setflags(write=False)
    return ModelState(
        dataset=dataset,
        loss_spec=loss_spec,
        theta=theta,
        retained=idx,
        alphas=alphas,
        betas=betas,
        hessian=H,
        hessian_factor=factor,
        leverages=leverages,
    )
