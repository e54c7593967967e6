import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mc_se
from steerkit import (
    DiscreteNoise,
    DynamicsSpec,
    GaussianNoise,
    LinearSystem,
    PointMass,
    ZeroNoise,
    covariance_recursion,
    simulate_do,
    simulate_rollouts,
)
from steerkit.dynamics import CHUNK, RolloutBatch, covariance_closed_form, draw_noise, propagate
from steerkit.errors import NumericOverflowError, SpecError


def test_zero_system_stays_at_zero():
    sys_ = LinearSystem(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)))
    batch = simulate_rollouts(sys_.to_spec(ZeroNoise(2)), T=3, K=2, n=5, seed=0)
    assert np.all(batch.states == 0) and np.all(batch.actions == 0)
    assert batch.states.shape == (5, 3, 2) and batch.actions.shape == (5, 2, 1)


def test_identity_drift_keeps_initial_state():
    v = np.array([1.5, -2.0])
    sys_ = LinearSystem(np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)))
    spec = sys_.to_spec(ZeroNoise(2), PointMass(v, [0.0]))
    batch = simulate_rollouts(spec, T=4, K=4, n=3, seed=1)
    assert np.all(batch.states == v)


def test_hand_recursion(scalar_system):
    # x1=1, u1=1, x2=0.5+1, u2=1.5+0.2, x3=0.75+1.7
    spec = scalar_system.to_spec(DiscreteNoise([1.0], steps=[1]))
    batch = simulate_rollouts(spec, T=3, K=2, n=1, seed=0)
    np.testing.assert_allclose(batch.states[0, :, 0], [1.0, 1.5, 2.45], rtol=1e-15)
    np.testing.assert_allclose(batch.actions[0, :, 0], [1.0, 1.7], rtol=1e-15)


def test_rollout_records():
    sys_ = LinearSystem.random(2, 1, seed=3)
    batch = simulate_rollouts(sys_.to_spec(), T=5, K=3, n=4, seed=2)
    r = batch[2]
    assert r.states.shape == (4, 2) and r.actions.shape == (3, 1)
    assert (r.T, r.K) == (5, 3)
    assert list(batch.times) == [2, 3, 4, 5]
    assert len(list(batch)) == 4


def test_preconditions():
    spec = LinearSystem.random(2, 2, seed=0).to_spec()
    with pytest.raises(ValueError):
        simulate_rollouts(spec, T=1, K=2, n=3, seed=0)
    with pytest.raises(ValueError):
        simulate_rollouts(spec, T=2, K=0, n=3, seed=0)
    with pytest.raises(ValueError):
        simulate_rollouts(spec, T=2, K=1, n=0, seed=0)
    with pytest.raises(ValueError):
        simulate_do(spec, T=1, u=[0, 0], n=3, seed=0)


def test_dimension_mismatch_is_spec_error():
    with pytest.raises(SpecError):
        LinearSystem(np.eye(2), np.zeros((3, 1)), np.zeros((1, 2)), np.zeros((1, 1)))
    with pytest.raises(SpecError):
        DynamicsSpec(2, 1, f=lambda x: x, g=lambda u: u, h=lambda x: x[:, :1], r=lambda u: u,
                     noise=GaussianNoise(2))
    with pytest.raises(SpecError):
        LinearSystem([[np.nan]], [[1.0]], [[1.0]], [[1.0]])


def test_divergence_names_first_offender():
    sys_ = LinearSystem([[1e7]], [[0.0]], [[0.0]], [[0.0]])
    spec = sys_.to_spec(GaussianNoise(1, scale=[1.0]))
    with pytest.raises(NumericOverflowError) as info:
        simulate_rollouts(spec, T=5, K=1, n=2 * CHUNK + 5, seed=0)
    # |x_1| ~ 1, x_2 ~ 1e7, x_3 ~ 1e14: every rollout overflows at t=3, first is rollout 0
    assert info.value.t == 3 and info.value.rollout == 0


def test_seed_reproducibility_and_prefix_stability():
    spec = LinearSystem.random(3, 2, seed=4).to_spec()
    a = simulate_rollouts(spec, T=4, K=2, n=CHUNK + 10, seed=11)
    b = simulate_rollouts(spec, T=4, K=2, n=CHUNK + 10, seed=11)
    c = simulate_rollouts(spec, T=4, K=2, n=30, seed=11)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
    # rollout k depends only on (seed, k, t), not on n
    assert np.array_equal(a.states[:30], c.states)
    d = simulate_rollouts(spec, T=4, K=2, n=30, seed=12)
    assert not np.array_equal(c.states, d.states)


def test_threads_do_not_change_results():
    spec = LinearSystem.random(2, 2, seed=5).to_spec()
    one = simulate_rollouts(spec, T=3, K=2, n=3 * CHUNK + 7, seed=9, workers=1)
    many = simulate_rollouts(spec, T=3, K=2, n=3 * CHUNK + 7, seed=9, workers=8)
    assert np.array_equal(one.states, many.states) and np.array_equal(one.noise, many.noise)


def test_noise_streams_are_uncorrelated():
    d = 2
    xi = draw_noise(LinearSystem.random(d, 1, seed=0).to_spec(), T=4, n=10_000, seed=3)
    bound = 4 / np.sqrt(10_000)
    for s in range(1, 5):
        for t in range(s + 1, 5):
            corr = np.corrcoef(xi[:, s].T, xi[:, t].T)[:d, d:]
            assert np.all(np.abs(corr) <= bound), (s, t, corr)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), sys_seed=st.integers(0, 1000))
def test_superposition(seed, sys_seed):
    sys_ = LinearSystem.random(3, 2, seed=sys_seed, scale=0.4)
    spec = sys_.to_spec()
    rng = np.random.default_rng(seed)
    n, T = 6, 4
    xi, xi2 = rng.standard_normal((2, n, T + 1, 3))
    zx, zu = np.zeros((n, 3)), np.zeros((n, 2))
    xs_sum, us_sum = propagate(spec, zx, zu, xi + xi2)
    xs_a, us_a = propagate(spec, zx, zu, xi)
    xs_b, us_b = propagate(spec, zx, zu, xi2)
    np.testing.assert_allclose(xs_sum, xs_a + xs_b, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(us_sum, us_a + us_b, rtol=1e-10, atol=1e-12)


def test_do_with_zero_B_has_no_effect():
    sys_ = LinearSystem([[0.5]], [[0.0]], [[1.0]], [[0.3]])
    spec = sys_.to_spec(GaussianNoise(1))
    a = simulate_do(spec, T=3, u=[-2.0], n=20_000, seed=1)
    b = simulate_do(spec, T=3, u=[5.0], n=20_000, seed=2)
    se = np.sqrt(mc_se(a) ** 2 + mc_se(b) ** 2)
    assert np.all(np.abs(a.mean(0) - b.mean(0)) <= 4 * se)


def test_do_at_factual_action_matches_observation(scalar_system):
    spec = scalar_system.to_spec(DiscreteNoise([1.0], steps=[1]))
    batch = simulate_rollouts(spec, T=3, K=2, n=1, seed=0)
    factual = batch.actions[0, -1]  # h(x_2) + r(u_1)
    x_do = simulate_do(spec, T=3, u=factual, n=1, seed=0)
    assert np.array_equal(x_do[0], batch.states[0, -1])


def test_do_with_shared_noise_reproduces_factual_for_stochastic_spec():
    sys_ = LinearSystem.random(2, 2, seed=8)
    spec = sys_.to_spec(GaussianNoise(2))
    batch = simulate_rollouts(spec, T=3, K=1, n=1, seed=21)
    x_do = simulate_do(spec, T=3, u=batch.actions[0, -1], n=1, seed=21)
    np.testing.assert_allclose(x_do[0], batch.states[0, -1], rtol=1e-14)


def test_do_mean_matches_linear_prediction():
    sys_ = LinearSystem.random(2, 2, seed=6, scale=0.5)
    spec = sys_.to_spec(GaussianNoise(2))
    u = np.array([1.0, -0.5])
    n, T, seed = 100_000, 3, 4
    x_T = simulate_do(spec, T, u, n, seed)
    # same seed: the observational x_{T-1} is the one the intervention starts from
    x_prev = simulate_rollouts(spec, T - 1, 1, n, seed).outcome()
    resid = x_T - x_prev @ sys_.A.T
    assert np.all(np.abs(resid.mean(0) - sys_.B @ u) <= 4 * mc_se(resid))


# ------------------------------------------------------------------ covariance recursion


def test_first_step_covariance_is_MMt(bounded_system):
    _, M = bounded_system.transition()
    np.testing.assert_array_equal(covariance_recursion(bounded_system, 1).Sigma, M @ M.T)


def test_nilpotent_propagation():
    d = 3
    sys_ = LinearSystem(np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)))
    _, M = sys_.transition()
    for t in (1, 2, 5):
        np.testing.assert_array_equal(covariance_recursion(sys_, t).Sigma, M @ M.T)


def test_recursion_rejects_t0(bounded_system):
    with pytest.raises(ValueError):
        covariance_recursion(bounded_system, 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(1, 8))
def test_recursion_matches_closed_form(seed, t):
    sys_ = LinearSystem.random(3, 2, seed=seed, scale=0.5)
    S = covariance_recursion(sys_, t).Sigma
    ref = covariance_closed_form(sys_, t)
    assert np.linalg.norm(S - ref) <= 1e-8 * np.linalg.norm(ref)


def test_recursion_is_psd():
    sys_ = LinearSystem.wishart(10, 7, 200, seed=1)
    for t in range(1, 6):
        S = covariance_recursion(sys_, t).Sigma
        w = np.linalg.eigvalsh(S)
        assert w[0] >= -1e-8 * w[-1]


def test_recursion_matches_monte_carlo():
    sys_ = LinearSystem.random(2, 2, seed=17, scale=0.5)
    n = 100_000
    batch = simulate_rollouts(sys_.to_spec(GaussianNoise(2)), T=3, K=1, n=n, seed=5)
    # (x_3, u_3): u_3 = C x_3 + D u_2
    x3 = batch.outcome()
    u3 = x3 @ sys_.C.T + batch.actions[:, -1] @ sys_.D.T
    z = np.hstack([x3, u3])
    prods = z[:, :, None] * z[:, None, :]  # zero-mean process: E[z z^T] is the covariance
    emp = prods.mean(0)
    se = prods.std(0, ddof=1) / np.sqrt(n)
    Sigma = covariance_recursion(sys_, 3).Sigma
    assert np.all(np.abs(emp - Sigma) <= 5 * se)


def test_batch_shape_validation():
    with pytest.raises(ValueError):
        RolloutBatch(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)), T=2, K=2)
