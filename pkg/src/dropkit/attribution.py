"""Closed-form leave-T-out estimators sharing one factorized ModelState.

All four estimators move from theta_hat by ``delta``:

    IF    delta = H^{-1} sum_{i in T} g_i
    NS    delta = (H - H_T)^{-1} sum_{i in T} g_i
    RIF   delta = sum_{i in T} (H - beta_i x_i x_i^T)^{-1} g_i = sum H^{-1} g_i / (1 - L_i)
    DRIF  delta = n / (n - k) * delta_RIF

with H the full-sample Hessian at theta_hat, H_T the Hessian contribution
of the dropped samples and L_i the leverage of sample i.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from scipy import linalg

from . import ermcore
from .errors import DimensionMismatch, InvalidSubset, LeverageAtOne, SingularHessian

Strategy = Literal["random", "adversarial_aligned", "leverage_topk", "explicit"]
METHODS = ("IF", "NS", "RIF", "DRIF", "EXACT")
LEVERAGE_GUARD = 1e-12


@dataclass(frozen=True)
class DropSet:
    indices: np.ndarray
    strategy_tag: Strategy = "explicit"

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise InvalidSubset("drop-set indices must be strictly increasing and >= 0")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def explicit(cls, indices: Iterable[int], n: Optional[int] = None) -> "DropSet":
        idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.intp)
        ds = cls(idx, "explicit")
        if n is not None:
            ds.validate(n)
        return ds

    @property
    def k(self) -> int:
        return int(self.indices.size)

    def validate(self, n: int) -> "DropSet":
        if self.k and self.indices[-1] >= n:
            raise InvalidSubset(f"drop index {self.indices[-1]} out of range for n={n}")
        if self.k >= n:
            raise InvalidSubset(f"|T|={self.k} must be < n={n}")
        return self

    def __len__(self):
        return self.k


@dataclass(frozen=True)
class AttributionEstimate:
    method: str
    theta_est: np.ndarray
    delta: np.ndarray

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "theta": [float(v) for v in self.theta_est],
            "delta": [float(v) for v in self.delta],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttributionEstimate":
        return cls(obj["method"], np.asarray(obj["theta"], float), np.asarray(obj["delta"], float))


def _as_dropset(dropset, n: int) -> DropSet:
    if not isinstance(dropset, DropSet):
        dropset = DropSet.explicit(dropset)
    return dropset.validate(n)


def _require_full(state: ermcore.ModelState):
    if not state.covers_full_sample:
        raise ValueError("estimators need a state whose Hessian covers the full sample")


def _make(state, method, delta) -> AttributionEstimate:
    delta = np.asarray(delta, dtype=np.float64)
    return AttributionEstimate(method, state.theta + delta, delta)


def estimate_if(state: ermcore.ModelState, dropset) -> AttributionEstimate:
    _require_full(state)
    T = _as_dropset(dropset, state.n)
    if T.k == 0:
        return _make(state, "IF", np.zeros(state.d))
    return _make(state, "IF", state.solve(state.grad_sum(T.indices)))


def _ns_woodbury(state, idx, g_T):
    # (H - U U^T)^{-1} = H^{-1} + H^{-1} U (I - U^T H^{-1} U)^{-1} U^T H^{-1}
    U = state.dataset.features[idx].T * np.sqrt(state.betas[idx])
    HinvU = state.solve(U)
    cap = np.eye(idx.size) - U.T @ HinvU
    cap = 0.5 * (cap + cap.T)
    factor = ermcore.cholesky(cap, "leave-T-out Hessian (capacitance)")
    Hinv_g = state.solve(g_T)
    return Hinv_g + HinvU @ linalg.cho_solve(factor, U.T @ Hinv_g)


def _ns_refactor(state, idx, g_T):
    X_T = state.dataset.features[idx]
    H_T = state.hessian - ermcore._weighted_gram(X_T, state.betas[idx])
    factor = ermcore.cholesky(H_T, "leave-T-out Hessian")
    return linalg.cho_solve(factor, g_T)


def estimate_ns(state: ermcore.ModelState, dropset, path: str = "auto") -> AttributionEstimate:
    """One Newton step from theta_hat on the retained loss.

    ``path`` selects ``"woodbury"`` (rank-k correction of the cached factor),
    ``"refactor"`` (fresh Cholesky of the retained Hessian) or ``"auto"``:
    Woodbury when k <= min(32, d).
    """
    _require_full(state)
    T = _as_dropset(dropset, state.n)
    if T.k == 0:
        return _make(state, "NS", np.zeros(state.d))
    if path == "auto":
        path = "woodbury" if T.k <= min(32, state.d) else "refactor"
    g_T = state.grad_sum(T.indices)
    if path == "woodbury":
        delta = _ns_woodbury(state, T.indices, g_T)
    elif path == "refactor":
        delta = _ns_refactor(state, T.indices, g_T)
    else:
        raise ValueError(f"unknown NS path {path!r}")
    return _make(state, "NS", delta)


def _rif_delta(state, T: DropSet) -> np.ndarray:
    if T.k == 0:
        return np.zeros(state.d)
    idx = T.indices
    slack = 1.0 - state.leverages[idx]
    bad = slack <= LEVERAGE_GUARD
    if np.any(bad):
        raise LeverageAtOne(
            f"leverage of sample {int(idx[bad][0])} is {state.leverages[idx][bad][0]:.15f}; "
            "leave-one-out Hessian is near singular"
        )
    # g_i is parallel to x_i, so Sherman-Morrison collapses to a scalar rescaling
    return state.solve(state.dataset.features[idx].T @ (state.alphas[idx] / slack))


def estimate_rif(state: ermcore.ModelState, dropset) -> AttributionEstimate:
    _require_full(state)
    T = _as_dropset(dropset, state.n)
    return _make(state, "RIF", _rif_delta(state, T))


def estimate_drif(state: ermcore.ModelState, dropset) -> AttributionEstimate:
    _require_full(state)
    T = _as_dropset(dropset, state.n)
    scale = state.n / (state.n - T.k)
    return _make(state, "DRIF", scale * _rif_delta(state, T))


ESTIMATORS = {
    "IF": estimate_if,
    "NS": estimate_ns,
    "RIF": estimate_rif,
    "DRIF": estimate_drif,
}


def estimate_exact(
    state: ermcore.ModelState,
    dropset,
    config: Optional[ermcore.FitConfig] = None,
    ns_estimate: Optional[AttributionEstimate] = None,
) -> AttributionEstimate:
    """Full retrain without ``dropset``, warm-started at the NS estimate."""
    T = _as_dropset(dropset, state.n)
    if ns_estimate is None and T.k:
        try:
            ns_estimate = estimate_ns(state, T)
        except SingularHessian:
            ns_estimate = None
    report = ermcore.retrain_without(
        state.dataset, state.loss_spec, T, config, theta_hat=state.theta, ns_estimate=ns_estimate
    )
    est = AttributionEstimate("EXACT", report.theta, report.theta - state.theta)
    return est


def estimate(state: ermcore.ModelState, dropset, methods: Sequence[str] = ("IF", "NS", "RIF", "DRIF")):
    """Run several estimators on one drop set; returns a method -> estimate dict."""
    out = {}
    for m in methods:
        m = m.upper()
        if m == "EXACT":
            out[m] = estimate_exact(state, dropset, ns_estimate=out.get("NS"))
        elif m in ESTIMATORS:
            out[m] = ESTIMATORS[m](state, dropset)
        else:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    return out


@dataclass(frozen=True)
class ErrorTable:
    """Pairwise L2 distances between estimates plus each ||delta||."""

    distances: dict
    delta_norms: dict

    def distance(self, a: str, b: str) -> float:
        a, b = a.upper(), b.upper()
        if a == b:
            return 0.0
        if (a, b) in self.distances:
            return self.distances[(a, b)]
        return self.distances[(b, a)]

    def rows(self):
        for (a, b), dist in self.distances.items():
            yield a, b, dist


def compare(estimates: Sequence[AttributionEstimate], exact: Optional[AttributionEstimate] = None) -> ErrorTable:
    """Distances are computed from the deltas, which all share the same base point."""
    items = list(estimates) + ([exact] if exact is not None else [])
    if not items:
        return ErrorTable({}, {})
    d = items[0].delta.shape
    for est in items:
        if est.delta.shape != d or est.theta_est.shape != d:
            raise DimensionMismatch(f"estimate {est.method} has shape {est.delta.shape}, expected {d}")
    order = {m: i for i, m in enumerate(METHODS)}
    items.sort(key=lambda e: order.get(e.method, len(order)))
    distances = {}
    for a, b in itertools.combinations(items, 2):
        distances[(a.method, b.method)] = float(np.linalg.norm(a.delta - b.delta))
    norms = {e.method: float(np.linalg.norm(e.delta)) for e in items}
    return ErrorTable(distances, norms)
