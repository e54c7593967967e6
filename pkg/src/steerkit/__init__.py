"""Simulate platform/consumer dynamics and estimate the steerability of consumption."""

from importlib.resources import files

from .dynamics import (
    DiscreteInit,
    DiscreteNoise,
    DynamicsSpec,
    GaussianNoise,
    JointCovariance,
    LinearSystem,
    PointMass,
    Rollout,
    RolloutBatch,
    ZeroNoise,
    covariance_recursion,
    simulate_do,
    simulate_rollouts,
)
from .estimators import (
    Discretization,
    LinearResidualizer,
    adjustment_estimate,
    compute_rho,
    dml_estimate,
    dml_fit,
    gaussian_error_bound,
    ped_from_adjustment,
    steerability,
    two_stage_estimate,
)
from .evaluation import TimeSeries, bootstrap, make_estimator, overlap_sweep, sliding_window
from .identifiability import (
    LinearDelta,
    check_full_row_rank_action,
    check_fully_spanning_shock,
    check_responsive_action,
    construct_twin,
    spectrum,
)
from .ingest import ingest_csv

__version__ = "0.1.0"


def fixture_path():
    """Path of the bundled synthetic avocado-style CSV."""
    return files("steerkit") / "data" / "avocado_fixture.csv"
