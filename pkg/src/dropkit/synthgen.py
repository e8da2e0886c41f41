"""Synthetic Gaussian logistic-regression populations and drop-set strategies.

All randomness goes through ``numpy.random.Generator`` (PCG64) seeded
explicitly; there is no module-level RNG state.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .attribution import DropSet
from .ermcore import Dataset, ModelState
from .errors import KTooLarge

STRATEGIES = ("random", "adversarial_aligned", "leverage_topk")


@dataclass(frozen=True)
class SynthConfig:
    n: int
    d: int
    theta_star_norm: float = 1.0
    lam: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.n <= self.d:
            raise ValueError(f"need n > d, got n={self.n}, d={self.d}")
        if not self.theta_star_norm > 0:
            raise ValueError("theta_star_norm must be positive")
        if not 0.25 <= self.theta_star_norm <= 4.0:
            warnings.warn(
                f"theta_star_norm={self.theta_star_norm} is outside [0.25, 4]; "
                "scaling results assume ||theta*|| = Theta(1)",
                stacklevel=2,
            )
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SynthInstance:
    dataset: Dataset
    theta_star: np.ndarray
    seed: int


def generate(config: SynthConfig) -> SynthInstance:
    """x_i ~ N(0, I_d); theta* uniform on the sphere of radius theta_star_norm;
    y_i ~ Bernoulli(sigmoid(<theta*, x_i>))."""
    rng = np.random.default_rng(config.seed)
    X = rng.standard_normal((config.n, config.d))
    # first column of a Haar-random rotation, i.e. a uniform unit vector
    direction = rng.standard_normal(config.d)
    direction /= np.linalg.norm(direction)
    theta_star = config.theta_star_norm * direction
    y = (rng.random(config.n) < expit(X @ theta_star)).astype(np.float64)
    return SynthInstance(Dataset(X, y), theta_star, config.seed)


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    # descending score, ties broken by ascending index
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:k])


def sample_dropset(instance, state: ModelState, strategy: str, k: int, seed: int = 0) -> DropSet:
    """Pick k samples to remove.

    ``random``: uniform k-subset.  ``adversarial_aligned``: draw a unit u
    orthogonal to theta_hat and take the k largest alpha_i <x_i, u>, so the
    removed gradients pile up along u.  ``leverage_topk``: the k largest
    leverages.
    """
    dataset = getattr(instance, "dataset", instance)
    n = dataset.n
    if k < 0 or k >= n:
        raise KTooLarge(f"k={k} must satisfy 0 <= k < n={n}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if k == 0:
        return DropSet(np.zeros(0, dtype=np.intp), strategy)
    rng = np.random.default_rng(seed)
    if strategy == "random":
        idx = np.sort(rng.choice(n, size=k, replace=False))
    elif strategy == "adversarial_aligned":
        u = rng.standard_normal(dataset.d)
        theta = state.theta
        tt = float(theta @ theta)
        if tt > 0 and dataset.d > 1:
            u -= (u @ theta) / tt * theta
        u /= np.linalg.norm(u)
        idx = _top_k(state.alphas * (dataset.features @ u), k)
    else:
        idx = _top_k(np.asarray(state.leverages), k)
    return DropSet(idx.astype(np.intp), strategy)
