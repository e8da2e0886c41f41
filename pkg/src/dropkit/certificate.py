"""Local error certificate for the Newton-step estimate, legacy global bound,
and Gaussian population oracles for the logistic third derivative.

The certificate bounds ||theta_T - theta_NS||_Sigma by ``c_h * c_op`` provided
``c_h * c_op < r``, where

* ``c_h`` bounds ||(H_theta - H) H^{-1} g||_{Sigma^{-1}} along the Newton segment,
* ``c_op`` bounds ||Sigma^{1/2} H_theta^{-1} Sigma^{1/2}|| over the Sigma-ball of
  radius r around theta_NS.

Both suprema are estimated from finite grids / samples, so every Certificate
carries ``sampled=True``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import integrate, linalg
from scipy.special import expit

from . import ermcore
from .attribution import DropSet, _as_dropset, estimate_ns
from .errors import NonConvexBall, QuadratureFailure, ZeroTheta

SigmaMode = Literal["identity", "hessian"]


@dataclass(frozen=True)
class CertificateConfig:
    radius: float = 1.0
    sigma_mode: SigmaMode = "identity"
    path_grid: int = 64
    ball_samples: int = 128
    inflation: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.sigma_mode not in ("identity", "hessian"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.path_grid < 2:
            raise ValueError("path_grid must be >= 2")
        if self.ball_samples < 1:
            raise ValueError("ball_samples must be >= 1")
        if not self.inflation >= 1.0:
            raise ValueError("inflation must be >= 1")


def _encode(x):
    if isinstance(x, dict):
        return {k: _encode(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return _encode(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_encode(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass(frozen=True)
class Certificate:
    c_h: float
    c_op: float
    radius: float
    sigma_mode: str
    condition_ok: bool
    bound: float
    theta_ns: np.ndarray
    sigma: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)
    sampled: bool = True

    def sigma_norm(self, v) -> float:
        v = np.asarray(v, dtype=np.float64)
        return float(math.sqrt(max(v @ self.sigma @ v, 0.0)))

    def to_json(self) -> dict:
        return _encode(
            {
                "c_h": self.c_h,
                "c_op": self.c_op,
                "radius": self.radius,
                "sigma_mode": self.sigma_mode,
                "condition_ok": bool(self.condition_ok),
                "bound": self.bound,
                "sampled": True,
                "theta_ns": self.theta_ns,
                "diagnostics": self.diagnostics,
            }
        )


@dataclass(frozen=True)
class LegacyBound:
    c_lip: float
    c_op_global: float
    c_ell: float
    k: int
    bound: float

    def to_json(self) -> dict:
        return _encode(self.__dict__)


@dataclass(frozen=True)
class _Setup:
    T: DropSet
    retained: np.ndarray
    delta: np.ndarray
    theta_ns: np.ndarray
    hessian: np.ndarray  # retained-sample Hessian at theta_hat
    sigma: np.ndarray
    sigma_chol: np.ndarray  # lower Cholesky factor of sigma


def _setup(state: ermcore.ModelState, dropset, config: CertificateConfig) -> _Setup:
    T = _as_dropset(dropset, state.n)
    retained = ermcore.complement(state.n, T.indices)
    delta = estimate_ns(state, T).delta
    X_T = state.dataset.features[T.indices]
    H = state.hessian - ermcore._weighted_gram(X_T, state.betas[T.indices])
    if config.sigma_mode == "identity":
        sigma = np.eye(state.d)
        chol = np.eye(state.d)
    else:
        sigma = H
        chol = ermcore.cholesky(H, "Sigma = retained Hessian")[0]
        chol = np.tril(chol)
    return _Setup(T, retained, delta, state.theta + delta, H, sigma, chol)


def _sigma_inv_norm(setup: _Setup, r: np.ndarray) -> np.ndarray:
    """||r||_{Sigma^{-1}} for the rows of r."""
    w = linalg.solve_triangular(setup.sigma_chol, np.atleast_2d(r).T, lower=True)
    return np.sqrt(np.sum(w * w, axis=0))


def _hessian_drift_norms(state, setup: _Setup, ts: np.ndarray, chunk: int = 64) -> np.ndarray:
    X = state.dataset.features[setup.retained]
    loss_spec = state.loss_spec
    z0 = X @ state.theta
    w = X @ setup.delta
    beta0 = ermcore.curvatures(loss_spec, z0)
    out = np.empty(ts.size)
    for start in range(0, ts.size, chunk):
        tt = ts[start:start + chunk]
        dbeta = ermcore.curvatures(loss_spec, z0[None, :] + tt[:, None] * w[None, :]) - beta0
        # (H_theta - H) delta = X^T diag(dbeta) X delta, one row per grid point
        R = (dbeta * w[None, :]) @ X
        out[start:start + chunk] = _sigma_inv_norm(setup, R)
    return out


def estimate_ch(state: ermcore.ModelState, dropset, config: Optional[CertificateConfig] = None, _setup_cache=None):
    """Inflated max of the Hessian-drift norm over a uniform grid on the Newton segment."""
    config = config or CertificateConfig()
    setup = _setup_cache or _setup(state, dropset, config)
    ts = np.linspace(0.0, 1.0, config.path_grid + 1)
    v = _hessian_drift_norms(state, setup, ts)
    raw = float(v.max())
    return config.inflation * raw, {"t": ts, "v": v, "raw_max": raw}


def _sphere(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    u = rng.standard_normal((m, d))
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return u / norms


def _op_norm(S: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(S))))


def estimate_cop(state: ermcore.ModelState, dropset, config: Optional[CertificateConfig] = None, _setup_cache=None):
    """Inflated inverse of the smallest whitened-Hessian eigenvalue over center + sphere samples."""
    config = config or CertificateConfig()
    setup = _setup_cache or _setup(state, dropset, config)
    rng = np.random.default_rng(config.seed)
    d = state.d
    L = setup.sigma_chol
    # e = r L^{-T} u has ||e||_Sigma = r for unit u
    offsets = config.radius * linalg.solve_triangular(L.T, _sphere(rng, config.ball_samples, d).T, lower=False).T
    offsets = np.vstack([np.zeros(d), offsets])
    center = setup.theta_ns
    lam_min = np.empty(len(offsets))
    secant_lip = np.zeros(len(offsets))
    third_lip = np.zeros(len(offsets))
    H_center = None
    for j, e in enumerate(offsets):
        theta = center + e
        H = ermcore.hessian(state.dataset, state.loss_spec, theta, setup.retained)
        Wt = linalg.solve_triangular(L, H, lower=True)
        W = linalg.solve_triangular(L, Wt.T, lower=True)
        lam_min[j] = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
        if j == 0:
            H_center = H
            continue
        step = float(np.linalg.norm(e))
        secant_lip[j] = _op_norm(H - H_center) / step
        T3 = ermcore.third_directional(state.dataset, state.loss_spec, center, e / step, setup.retained)
        third_lip[j] = _op_norm(T3)
    diagnostics = {
        "lambda_min": lam_min,
        "lambda_min_center": float(lam_min[0]),
        "secant_lipschitz_max": float(secant_lip.max()),
        "third_derivative_opnorm_max": float(third_lip.max()),
        "max_offset_norm": float(np.linalg.norm(offsets, axis=1).max()),
    }
    # curvature a Lipschitz Hessian could lose across the ball, relative to the unwhitened center curvature
    center_floor = float(np.linalg.eigvalsh(H_center)[0])
    diagnostics["relative_slack_estimate"] = float(
        max(secant_lip.max(), third_lip.max()) * diagnostics["max_offset_norm"] / max(center_floor, 1e-300)
    )
    if np.any(lam_min <= 0):
        raise NonConvexBall(
            f"whitened Hessian has lambda_min={lam_min.min():.3e} <= 0 inside the certificate ball"
        )
    c_op = config.inflation / float(lam_min.min())
    return c_op, diagnostics


def certify_ns(state: ermcore.ModelState, dropset, config: Optional[CertificateConfig] = None) -> Certificate:
    config = config or CertificateConfig()
    setup = _setup(state, dropset, config)
    c_h, ch_diag = estimate_ch(state, setup.T, config, _setup_cache=setup)
    c_op, cop_diag = estimate_cop(state, setup.T, config, _setup_cache=setup)
    product = c_h * c_op
    ok = bool(product < config.radius)
    return Certificate(
        c_h=c_h,
        c_op=c_op,
        radius=config.radius,
        sigma_mode=config.sigma_mode,
        condition_ok=ok,
        bound=product if ok else math.inf,
        theta_ns=setup.theta_ns,
        sigma=setup.sigma,
        diagnostics={"c_h": ch_diag, "c_op": cop_diag, "k": setup.T.k},
    )


def legacy_bound(
    state: ermcore.ModelState,
    dropset,
    lam: Optional[float] = None,
    inflation: float = 1.1,
    n_points: int = 8,
    n_directions: int = 16,
    seed: int = 0,
) -> LegacyBound:
    """0.5 * C_Lip * C_op^3 * k^2 * C_ell^2 under global strong convexity from the L2 term.

    C_op = 1/(n lam); C_ell = max_i ||g_i||; C_Lip is the inflated max operator
    norm of the third-derivative contraction over random unit directions at
    ``n_points`` points of the segment [0, 2 theta_hat].
    """
    T = _as_dropset(dropset, state.n)
    lam = state.loss_spec.lam if lam is None else float(lam)
    retained = ermcore.complement(state.n, T.indices)
    c_ell = float(np.max(np.abs(state.alphas) * np.linalg.norm(state.dataset.features, axis=1)))
    rng = np.random.default_rng(seed)
    dirs = _sphere(rng, n_directions, state.d)
    c_lip = 0.0
    for s in np.linspace(0.0, 2.0, n_points):
        theta = s * state.theta
        for e in dirs:
            T3 = ermcore.third_directional(state.dataset, state.loss_spec, theta, e, retained)
            c_lip = max(c_lip, _op_norm(T3))
    c_lip *= inflation
    if lam <= 0:
        return LegacyBound(c_lip, math.inf, c_ell, T.k, math.inf)
    c_op = 1.0 / (state.n * lam)
    return LegacyBound(c_lip, c_op, c_ell, T.k, 0.5 * c_lip * c_op**3 * T.k**2 * c_ell**2)


# ---------------------------------------------------------------------------
# Gaussian population oracles for the logistic third derivative
# ---------------------------------------------------------------------------

def gamma(z):
    """Third derivative of the logistic loss in the margin: e^z (1 - e^z) / (1 + e^z)^3."""
    z = np.asarray(z, dtype=np.float64)
    return -expit(z) * expit(-z) * np.tanh(0.5 * z)


def _sigmoid_derivative(order: int, z):
    # d^m sigmoid / dz^m as a polynomial in s = sigmoid(z)
    coeffs = {
        3: (1.0, -7.0, 12.0, -6.0),
        5: (1.0, -31.0, 180.0, -390.0, 360.0, -120.0),
    }[order]
    s = expit(z)
    return sum(c * s ** (p + 1) for p, c in enumerate(coeffs))


_QUAD_TOL = 1e-10


def _gauss_expect(f, what: str) -> float:
    """E[f(Z)] for Z ~ N(0, 1) with f even; integrates 2 * int_0^inf f(z) phi(z) dz."""
    norm = 1.0 / math.sqrt(2.0 * math.pi)
    val, err = integrate.quad(
        lambda z: f(z) * math.exp(-0.5 * z * z) * norm, 0.0, math.inf,
        epsabs=1e-13, epsrel=1e-12, limit=200,
    )
    if not 2.0 * err <= _QUAD_TOL:
        raise QuadratureFailure(f"{what}: quadrature error estimate {2 * err:.2e} exceeds {_QUAD_TOL:g}")
    return 2.0 * val


def population_third_moments(t: float) -> tuple[float, float]:
    """(E[Z^3 gamma(tZ)], E[Z gamma(tZ)]) for standard normal Z."""
    if not t > 0:
        raise ValueError("t must be > 0")
    a_star = _gauss_expect(lambda z: z**3 * float(gamma(t * z)), "E[Z^3 gamma(tZ)]")
    b_star = _gauss_expect(lambda z: z * float(gamma(t * z)), "E[Z gamma(tZ)]")
    return a_star, b_star


def population_third_coeffs(t: float) -> tuple[float, float]:
    """Coefficients (a, b) with E[gamma(<x,theta>) x^{(x)3}] = a theta^{(x)3} + b sym(I (x) theta).

    a(t) = (E[Z^3 gamma(tZ)] - 3 E[Z gamma(tZ)]) / t^3 and b(t) = E[Z gamma(tZ)] / t.
    Gaussian integration by parts turns these into E[sigma^(5)(tZ)] and
    E[sigma^(3)(tZ)], which avoids the 1/t^3 cancellation at small t.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    a = _gauss_expect(lambda z: float(_sigmoid_derivative(5, t * z)), "a(t)")
    b = _gauss_expect(lambda z: float(_sigmoid_derivative(3, t * z)), "b(t)")
    return a, b


def population_third_contraction(theta, v) -> np.ndarray:
    """E_x[gamma(<x,theta>) <x,v>^2 x] for x ~ N(0, I): the per-sample expected T(v, v, .)."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = float(np.linalg.norm(theta))
    if t == 0.0:
        raise ZeroTheta("population contraction needs ||theta|| > 0")
    a, b = population_third_coeffs(t)
    tv = float(theta @ v)
    return a * tv**2 * theta + b * (float(v @ v) * theta + 2.0 * tv * v)
