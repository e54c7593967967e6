import numpy as np
import pytest

from steerkit import Discretization, LinearSystem, fixture_path, ingest_csv

# Case-study buckets for log demand and log price.
DEMAND_EDGES = [14.539, 15.014, 15.837]
PRICE_EDGES = [-0.479, 0.131, 0.683]


@pytest.fixture
def scalar_system():
    return LinearSystem([[0.5]], [[1.0]], [[1.0]], [[0.2]])


@pytest.fixture
def bounded_system():
    """Well-conditioned 2x2 system with full-rank DC."""
    return LinearSystem(
        [[0.5, 0.1], [0.0, 0.4]],
        [[1.0, 0.2], [0.1, 0.8]],
        [[1.0, 0.0], [0.3, 1.0]],
        [[0.5, 0.1], [0.0, 0.6]],
    )


@pytest.fixture(scope="session")
def avocado_series():
    return ingest_csv(
        str(fixture_path()), "AveragePrice", "Total Volume", time="Date",
        group="region", groups=["Southeast", "GreatLakes"], log_transform=True,
    )


@pytest.fixture(scope="session")
def case_study_disc():
    return Discretization.from_edges([DEMAND_EDGES], [PRICE_EDGES])


def mc_se(samples):
    samples = np.asarray(samples, dtype=float)
    return samples.std(axis=0, ddof=1) / np.sqrt(len(samples))


def two_stage_trial_errors(sys_, n, trials, seed, sigma1=1.0, sigma2=1.0):
    """Squared Frobenius errors of the two-stage estimate over ``trials`` independent batches."""
    from steerkit import GaussianNoise, simulate_rollouts, two_stage_estimate

    spec = sys_.to_spec(GaussianNoise(sys_.d, scale=[sigma1, sigma2]))
    big = simulate_rollouts(spec, T=3, K=2, n=n * trials, seed=seed)
    errs = []
    for i in range(trials):
        est = two_stage_estimate(big.take(np.arange(i * n, (i + 1) * n)))
        errs.append(float(np.sum((est.B_hat - sys_.B) ** 2)))
    return np.array(errs)
