import numpy as np
import pytest

from dropkit import ermcore, synthgen

ACCEPTANCE_LINES = []


def random_dataset(n, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    X = scale * rng.standard_normal((n, d))
    theta = rng.standard_normal(d) / np.sqrt(d)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-X @ theta))).astype(float)
    return ermcore.Dataset(X, y)


def fitted_state(n, d, seed, lam=0.0, kind="logistic"):
    ds = random_dataset(n, d, seed)
    spec = ermcore.LossSpec(kind, lam)
    rep = ermcore.fit(ds, spec)
    assert rep.converged
    return ermcore.build_state(ds, spec, rep.theta)


def synthetic_state(n, d, seed, lam=0.0):
    inst = synthgen.generate(synthgen.SynthConfig(n, d, 1.0, lam, seed))
    spec = ermcore.LossSpec("logistic", lam)
    rep = ermcore.fit(inst.dataset, spec)
    assert rep.converged
    return inst, ermcore.build_state(inst.dataset, spec, rep.theta)


def rel_err(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def small_state():
    return fitted_state(200, 5, seed=11)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
