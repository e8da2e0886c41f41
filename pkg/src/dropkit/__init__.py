"""Leave-k-out data attribution for convex empirical risk minimization.

Modules
-------
ermcore      regularized logistic / quadratic risk, derivatives, Newton solver
attribution  IF, NS, RIF and DRIF estimates from one factorized state
certificate  sampled local NS certificate, legacy global bound, Gaussian oracles
synthgen     Gaussian logistic populations and drop-set strategies
scalinglab   (n, d, k) sweeps, log-log slope fits, reports
cli          the ``dropkit`` command
"""
from .attribution import (
    AttributionEstimate,
    DropSet,
    ErrorTable,
    compare,
    estimate,
    estimate_drif,
    estimate_exact,
    estimate_if,
    estimate_ns,
    estimate_rif,
)
from .certificate import (
    Certificate,
    CertificateConfig,
    LegacyBound,
    certify_ns,
    estimate_ch,
    estimate_cop,
    legacy_bound,
    population_third_coeffs,
    population_third_contraction,
)
from .ermcore import (
    Dataset,
    FitConfig,
    FitReport,
    LossSpec,
    ModelState,
    build_state,
    fit,
    gradient,
    hessian,
    loss,
    retrain_without,
    third_directional,
)
from .errors import *  # noqa: F401,F403
from .scalinglab import SlopeFit, SweepRecord, SweepSpec, emit_report, fit_scaling, run_sweep
from .synthgen import SynthConfig, SynthInstance, generate, sample_dropset

__version__ = "0.1.0"
