import csv

import numpy as np
import pytest

from conftest import DEMAND_EDGES, PRICE_EDGES
from steerkit import Discretization, RolloutBatch, TimeSeries, bootstrap, make_estimator, overlap_sweep, sliding_window
from steerkit.errors import InsufficientSamplesError
from steerkit.evaluation import DEFAULT_REPLICATES, AdjustmentPED, write_overlap_csv, write_tidy_csv

K_LIST = [1, 3, 5, 7, 9]


# ------------------------------------------------------------------ sliding windows


def _series(n, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeries(rng.standard_normal(n), rng.standard_normal(n))


def test_window_counts():
    s = _series(4)
    assert sliding_window(s, 2).n == 2
    b = sliding_window(_series(6), 2)
    assert b.n == 4 and b.meta["window_end"] == [2, 3, 4, 5]


def test_window_contents():
    u = np.arange(6.0)
    x = 10 + np.arange(6.0)
    b = sliding_window(TimeSeries(u, x), 2)
    np.testing.assert_array_equal(b.states[1, :, 0], [11, 12, 13])
    np.testing.assert_array_equal(b.actions[1, :, 0], [1, 2])
    assert b.treatment()[1, 0] == 2 and b.outcome()[1, 0] == 13


def test_window_too_long():
    with pytest.raises(InsufficientSamplesError):
        sliding_window(_series(4), 4)
    with pytest.raises(ValueError):
        sliding_window(_series(4), 0)


def test_series_validation():
    with pytest.raises(ValueError):
        TimeSeries([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        TimeSeries([1.0, np.nan], [1.0, 2.0])


# ------------------------------------------------------------------ bootstrap


def _gaussian_batch(n, seed, mu=2.0, sigma=1.5):
    y = mu + sigma * np.random.default_rng(seed).standard_normal(n)
    return RolloutBatch(np.stack([np.zeros(n), y], 1)[:, :, None], np.zeros((n, 1, 1)), T=1, K=1)


def sample_mean(batch):
    return float(batch.outcome().mean())


def test_constant_estimator_has_zero_spread():
    const = lambda batch: 0.3  # noqa: E731
    rep = bootstrap(const, _gaussian_batch(50, 0), replicates=DEFAULT_REPLICATES, seed=1, reference=const)
    assert rep.replicates == 40
    assert rep.bias_vs_reference == 0.0 and rep.bias_vs_self == 0.0 and rep.std_dev == 0.0
    assert rep.ci_low == rep.ci_high == 0.3


def test_bootstrap_sd_of_mean():
    n, sigma = 200, 1.5
    sds = [bootstrap(sample_mean, _gaussian_batch(n, s, sigma=sigma), replicates=200, seed=s,
                     reference=sample_mean).std_dev for s in range(20)]
    assert abs(np.mean(sds) / (sigma / np.sqrt(n)) - 1) <= 0.3


def test_bootstrap_determinism_and_threads(avocado_series, case_study_disc):
    est = AdjustmentPED(case_study_disc)
    a = bootstrap(est, avocado_series, 3, replicates=10, seed=5, disc=case_study_disc)
    b = bootstrap(est, avocado_series, 3, replicates=10, seed=5, disc=case_study_disc, workers=8)
    assert a == b
    c = bootstrap(est, avocado_series, 3, replicates=10, seed=6, disc=case_study_disc)
    assert a.values != c.values


def test_ci_ordering(avocado_series, case_study_disc):
    rep = bootstrap(AdjustmentPED(case_study_disc), avocado_series, 1, seed=0, disc=case_study_disc)
    assert rep.ci_low <= rep.ci_high and rep.bins_fixed_from_original


def test_unreliable_flag():
    def flaky(batch):
        if batch.outcome().mean() > 2.0:
            raise ValueError("refuse")
        return 1.0

    rep = bootstrap(flaky, _gaussian_batch(30, 0, mu=2.5, sigma=0.2), replicates=10, seed=0, reference=flaky)
    assert rep.unreliable and rep.failures == 10 and rep.std_dev is None


def test_bootstrap_arguments(avocado_series, case_study_disc):
    est = AdjustmentPED(case_study_disc)
    with pytest.raises(ValueError):
        bootstrap(est, avocado_series, 1, replicates=1, disc=case_study_disc)
    with pytest.raises(ValueError):
        bootstrap(est, avocado_series, None, disc=case_study_disc)
    with pytest.raises(ValueError):
        bootstrap(est, avocado_series, 1)


def test_bias_grows_with_window(avocado_series, case_study_disc):
    est = AdjustmentPED(case_study_disc)
    b1 = bootstrap(est, avocado_series, 1, seed=0, disc=case_study_disc).bias_vs_self
    b9 = bootstrap(est, avocado_series, 9, seed=0, disc=case_study_disc).bias_vs_self
    assert abs(b1) < abs(b9)


def test_tidy_csv(tmp_path, avocado_series, case_study_disc):
    reps = [bootstrap(make_estimator(name, case_study_disc), avocado_series, 1, replicates=5, seed=0,
                      disc=case_study_disc) for name in ("adjustment", "lr-dml")]
    path = tmp_path / "boot.csv"
    write_tidy_csv(reps, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["estimator", "K", "replicate", "value"]
    assert len(rows) == 11 and {r[0] for r in rows[1:]} == {"adjustment-zero-fill", "lr-dml"}


def test_named_estimators(avocado_series, case_study_disc):
    batch = sliding_window(avocado_series, 1)
    assert make_estimator("adjustment", case_study_disc)(batch) == pytest.approx(-0.412, abs=1e-3)
    # the fixture is generated with an elasticity of -0.8
    assert make_estimator("lr-dml")(batch) == pytest.approx(-0.8, abs=0.1)
    with pytest.raises(ValueError):
        make_estimator("adjustment")
    with pytest.raises(ValueError):
        make_estimator("ridge")


def test_forest_residualizer(avocado_series):
    pytest.importorskip("sklearn")
    value = make_estimator("rf-dml", split_seed=0)(sliding_window(avocado_series, 1))
    assert np.isfinite(value)


# ------------------------------------------------------------------ overlap sweep


def test_fixture_overlap_trend(avocado_series, case_study_disc):
    rows = overlap_sweep(avocado_series, K_LIST, case_study_disc, {"High": 1, "Low": 0})
    assert [(r.K, r.treatment) for r in rows[:2]] == [(1, "High"), (1, "Low")]
    for label in ("High", "Low"):
        mass = [r.undefined_mass for r in rows if r.treatment == label]
        assert all(a <= b for a, b in zip(mass, mass[1:]))
    k1 = [r for r in rows if r.K == 1]
    k9 = [r for r in rows if r.K == 9]
    assert all(r.n_undefined == 0 and r.estimate is not None for r in k1)
    assert all(r.n_undefined > 0 and r.estimate is None for r in k9)
    assert all(0 <= r.undefined_fraction <= 1 and 0 <= r.undefined_mass <= 1 for r in rows)


def test_fixture_demand_within_buckets(avocado_series):
    x = avocado_series.x[:, 0]
    assert np.all((x > DEMAND_EDGES[0]) & (x <= DEMAND_EDGES[-1]))
    u = avocado_series.u[:, 0]
    assert np.all((u > PRICE_EDGES[0]) & (u <= PRICE_EDGES[-1]))


def test_full_overlap_synthetic():
    rng = np.random.default_rng(0)
    n = 10_000
    x = rng.integers(0, 2, n) + 0.5
    u = rng.integers(0, 2, n) + 0.5
    disc = Discretization.from_edges([[0.0, 1.0, 2.0]], [[0.0, 1.0, 2.0]])
    rows = overlap_sweep(TimeSeries(u, x), [1, 2, 3], disc)
    assert all(r.n_undefined == 0 for r in rows)
    # 2^K confounder strata, all occupied
    assert [r.n_strata for r in rows] == [2, 2, 4, 4, 8, 8]


def test_deterministic_treatment_breaks_overlap():
    # u_t = x_t, so every fine state bin maps to a single action bin
    x = np.linspace(0.01, 2.0, 200)
    u = x.copy()
    disc = Discretization.from_edges([[0.0, 2.0]], [[0.0, 1.0, 2.0]])
    disc_fine = Discretization.from_edges([[0.0, 0.5, 1.0, 1.5, 2.0]], [[0.0, 1.0, 2.0]])
    rows = overlap_sweep(TimeSeries(u, x), [1], disc_fine)
    assert all(r.undefined_fraction > 0 for r in rows)
    # a single coarse stratum keeps both actions, so the estimate stays defined
    assert all(r.n_undefined == 0 for r in overlap_sweep(TimeSeries(u, x), [1], disc))


def test_overlap_csv(tmp_path, avocado_series, case_study_disc):
    rows = overlap_sweep(avocado_series, K_LIST, case_study_disc, {"High": 1, "Low": 0})
    path = tmp_path / "overlap.csv"
    write_overlap_csv(rows, path)
    table = list(csv.DictReader(open(path)))
    assert len(table) == 10
    assert list(table[0]) == ["K", "treatment", "estimate", "undefined_terms", "undefined_fraction", "undefined_mass"]
    assert table[-2]["estimate"] == "N/A" and " / " in table[-2]["undefined_terms"]
