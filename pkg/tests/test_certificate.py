import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropkit import attribution, certificate, ermcore, synthgen
from dropkit.certificate import CertificateConfig, certify_ns, estimate_ch, estimate_cop, legacy_bound
from dropkit.errors import NonConvexBall, SingularHessian, ZeroTheta
from conftest import fitted_state, rel_err, synthetic_state


def ns_error(state, T, cert):
    exact = attribution.estimate_exact(state, T)
    return cert.sigma_norm(exact.theta_est - cert.theta_ns)


class TestQuadraticLoss:
    def test_curvature_is_constant(self):
        state = fitted_state(300, 5, 1, kind="quadratic")
        T = [3, 4, 5]
        c_h, _ = estimate_ch(state, T)
        assert c_h == 0.0
        cfg = CertificateConfig(sigma_mode="hessian")
        c_op, diag = estimate_cop(state, T, cfg)
        assert c_op == pytest.approx(cfg.inflation, rel=1e-10)
        cert = certify_ns(state, T, cfg)
        assert cert.condition_ok and cert.bound == 0.0
        assert ns_error(state, T, cert) <= 1e-8


def test_empty_dropset_has_zero_drift(small_state):
    assert estimate_ch(small_state, [])[0] == 0.0


def test_heavy_regularization_limit():
    ds = fitted_state(300, 4, 2).dataset
    lam = 1e4
    spec = ermcore.LossSpec("logistic", lam)
    state = ermcore.build_state(ds, spec, ermcore.fit(ds, spec).theta)
    cfg = CertificateConfig()
    c_op, _ = estimate_cop(state, [1, 2], cfg)
    assert c_op == pytest.approx(cfg.inflation / (300 * lam), rel=1e-4)


def test_grid_refinement_stable():
    _, state = synthetic_state(2000, 6, 3)
    T = [0, 1, 2]
    coarse = estimate_ch(state, T, CertificateConfig(path_grid=64))[1]["raw_max"]
    fine = estimate_ch(state, T, CertificateConfig(path_grid=4096))[1]["raw_max"]
    assert coarse <= fine * (1 + 1e-12)
    assert abs(coarse - fine) <= 0.05 * fine


def test_drift_norm_matches_dense_hessians(small_state):
    T = [1, 8, 9]
    cfg = CertificateConfig(path_grid=4, inflation=1.0)
    _, diag = estimate_ch(small_state, T, cfg)
    delta = attribution.estimate_ns(small_state, T).delta
    keep = ermcore.complement(small_state.n, T)
    H0 = ermcore.hessian(small_state.dataset, small_state.loss_spec, small_state.theta, keep)
    for t, v in zip(diag["t"], diag["v"]):
        Ht = ermcore.hessian(small_state.dataset, small_state.loss_spec, small_state.theta + t * delta, keep)
        assert v == pytest.approx(np.linalg.norm((Ht - H0) @ delta), rel=1e-9, abs=1e-15)


def test_hessian_sigma_whitening(small_state):
    T = [0, 1]
    cfg = CertificateConfig(sigma_mode="hessian", inflation=1.0)
    c_op, diag = estimate_cop(small_state, T, cfg)
    # at the center the whitened matrix is H_c^{1/2}-conjugated retained Hessian
    keep = ermcore.complement(small_state.n, T)
    H0 = ermcore.hessian(small_state.dataset, small_state.loss_spec, small_state.theta, keep)
    ns = attribution.estimate_ns(small_state, T).theta_est
    Hc = ermcore.hessian(small_state.dataset, small_state.loss_spec, ns, keep)
    expected = np.min(np.linalg.eigvals(np.linalg.solve(H0, Hc)).real)
    assert diag["lambda_min_center"] == pytest.approx(expected, rel=1e-10)


def test_invariant_to_sample_order():
    _, state = synthetic_state(500, 4, 4)
    T = [5, 77, 300]
    base = estimate_ch(state, T)[0]
    perm = np.random.default_rng(0).permutation(500)
    inv = np.argsort(perm)
    ds = ermcore.Dataset(state.dataset.features[perm], state.dataset.labels[perm])
    pstate = ermcore.build_state(ds, state.loss_spec, state.theta)
    assert estimate_ch(pstate, sorted(inv[T]))[0] == pytest.approx(base, rel=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_cop_scales_like_inverse_n(seed):
    _, state = synthetic_state(4000, 10, seed)
    c_op, _ = estimate_cop(state, [0, 1, 2, 3, 4])
    assert 1.0 <= c_op * 4000 <= 50.0


def test_certificate_valid_on_benign_instances():
    hits = 0
    for seed in range(20):
        inst, state = synthetic_state(4000, 10, 50 + seed)
        T = synthgen.sample_dropset(inst, state, "random", 5, seed)
        cert = certify_ns(state, T)
        err = ns_error(state, T, cert)
        hits += bool(cert.condition_ok and err <= cert.bound)
    assert hits >= 19


def test_hessian_sigma_certificate_valid():
    inst, state = synthetic_state(4000, 10, 7)
    T = synthgen.sample_dropset(inst, state, "random", 5, 0)
    cert = certify_ns(state, T, CertificateConfig(sigma_mode="hessian", radius=5.0))
    assert cert.condition_ok
    assert ns_error(state, T, cert) <= cert.bound


def test_half_sample_adversarial_is_not_certified():
    inst, state = synthetic_state(400, 5, 8)
    T = synthgen.sample_dropset(inst, state, "adversarial_aligned", 200, 0)
    try:
        cert = certify_ns(state, T)
    except (NonConvexBall, SingularHessian):
        return
    assert not cert.condition_ok
    assert math.isinf(cert.bound)


def test_certificate_json_is_finite_safe():
    inst, state = synthetic_state(400, 5, 8)
    T = synthgen.sample_dropset(inst, state, "adversarial_aligned", 150, 0)
    cert = certify_ns(state, T)
    payload = json.loads(json.dumps(cert.to_json(), allow_nan=False))
    assert payload["sampled"] is True
    if not cert.condition_ok:
        assert payload["bound"] == "inf"


class TestLegacyBound:
    def test_unregularized_is_infinite(self):
        _, state = synthetic_state(1000, 5, 9)
        lb = legacy_bound(state, [1, 2])
        assert math.isinf(lb.bound)
        assert lb.c_lip > 0

    def test_cubic_lambda_scaling(self):
        _, state = synthetic_state(1000, 5, 9)
        b1 = legacy_bound(state, [1, 2], lam=0.1).bound
        b2 = legacy_bound(state, [1, 2], lam=0.2).bound
        assert b2 / b1 == pytest.approx(1 / 8, rel=1e-12)

    def test_c_ell_oracle(self, small_state):
        lb = legacy_bound(small_state, [0], lam=1.0)
        g = small_state.grads
        assert lb.c_ell == pytest.approx(np.linalg.norm(g, axis=1).max(), rel=1e-14)

    def test_far_looser_than_certificate(self):
        n, d = 4000, 10
        lam = d / n
        inst = synthgen.generate(synthgen.SynthConfig(n, d, 1.0, lam, 11))
        spec = ermcore.LossSpec("logistic", lam)
        state = ermcore.build_state(inst.dataset, spec, ermcore.fit(inst.dataset, spec).theta)
        T = synthgen.sample_dropset(inst, state, "random", 5, 0)
        cert = certify_ns(state, T)
        assert cert.condition_ok
        assert legacy_bound(state, T).bound >= 1e3 * cert.bound


class TestPopulationOracles:
    def test_small_t_limit(self):
        # sigma'''(0) = -1/8
        _, b = certificate.population_third_coeffs(1e-3)
        assert b == pytest.approx(-0.125, abs=1e-3)

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0, 2.0, 4.0])
    def test_stein_forms_match_raw_moments(self, t):
        a, b = certificate.population_third_coeffs(t)
        a_star, b_star = certificate.population_third_moments(t)
        assert b == pytest.approx(b_star / t, rel=1e-8)
        assert a == pytest.approx((a_star - 3 * b_star) / t**3, rel=1e-7)

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0, 2.0, 4.0])
    def test_proven_signs(self, t):
        a_star, b_star = certificate.population_third_moments(t)
        _, b = certificate.population_third_coeffs(t)
        assert a_star < 0 and b_star < 0 and b < 0

    def test_sigmoid_derivative_polynomials(self):
        z = np.linspace(-6, 6, 13)
        h = 1e-3
        g = certificate.gamma
        fd3 = (g(z + h) - g(z - h)) / (2 * h)
        np.testing.assert_allclose(certificate._sigmoid_derivative(3, z), fd3, atol=1e-7)
        fd5 = (g(z + 2 * h) - 2 * g(z + h) + 2 * g(z - h) - g(z - 2 * h)) / (2 * h**3)
        np.testing.assert_allclose(certificate._sigmoid_derivative(5, z), fd5, atol=1e-5)

    def test_continuity(self):
        ts = np.linspace(0.1, 5.0, 50)
        vals = np.array([certificate.population_third_coeffs(t) for t in ts])
        # no jumps: increments stay within a modest Lipschitz envelope
        assert np.max(np.abs(np.diff(vals, axis=0))) <= 0.5 * (ts[1] - ts[0])

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(2024)
        t = 1.0
        m = 2_000_000
        z = rng.standard_normal(m)
        g = certificate.gamma(t * z)
        a_star, b_star = certificate.population_third_moments(t)
        for sample, ref in ((z**3 * g, a_star), (z * g, b_star)):
            se = sample.std() / math.sqrt(m)
            assert abs(sample.mean() - ref) <= 4 * se

    def test_monte_carlo_contraction(self):
        rng = np.random.default_rng(7)
        theta = np.array([0.8, -0.3, 0.5])
        v = np.array([0.2, 1.0, -0.4])
        m = 2_000_000
        X = rng.standard_normal((m, 3))
        samples = certificate.gamma(X @ theta)[:, None] * (X @ v)[:, None] ** 2 * X
        se = samples.std(axis=0) / math.sqrt(m)
        expected = certificate.population_third_contraction(theta, v)
        assert np.all(np.abs(samples.mean(axis=0) - expected) <= 4 * se)

    def test_orthogonal_direction(self):
        theta = np.array([1.5, 0.0])
        v = np.array([0.0, 2.0])
        _, b = certificate.population_third_coeffs(1.5)
        np.testing.assert_allclose(certificate.population_third_contraction(theta, v), b * 4 * theta, rtol=1e-14)

    def test_zero_theta(self):
        with pytest.raises(ZeroTheta):
            certificate.population_third_contraction(np.zeros(3), np.ones(3))


@settings(max_examples=40, deadline=None)
@given(
    theta=st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.05),
    v=st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.05),
)
def test_contraction_points_against_theta(theta, v):
    out = certificate.population_third_contraction(theta, v)
    assert float(np.dot(out, theta)) < 0
