import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adasplit.reward import (
    RewardConfig,
    Trajectory,
    allocation_reward,
    creation_penalty,
    discounted_returns,
    orthogonality_reward,
    standardize,
    update_lambda,
)


def double_sum_returns(rewards, lam):
    n = len(rewards)
    return np.array([sum(lam ** (k - t) * rewards[k] for k in range(t, n)) for t in range(n)])


def test_allocation_reward_single_subsequence_is_one(rng):
    assert allocation_reward(rng.normal(size=(1, 5)), rng.normal(size=5), 0) == 1.0


def test_allocation_reward_symmetric_tie():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([2.0, 2.0])
    assert allocation_reward(P, v, 0) == pytest.approx(0.5)
    assert allocation_reward(P, v, 1) == pytest.approx(0.5)


def test_allocation_reward_matches_scalar_softmax(rng):
    P, v = rng.normal(size=(4, 6)), rng.normal(size=6)
    dots = [sum(P[i, j] * v[j] for j in range(6)) for i in range(4)]
    denom = sum(math.exp(x) for x in dots)
    for a in range(4):
        assert allocation_reward(P, v, a) == pytest.approx(math.exp(dots[a]) / denom, rel=1e-12)


def test_orthogonality_examples():
    assert orthogonality_reward(np.array([[0.3, 0.4]])) == 0.0
    assert orthogonality_reward(np.eye(2)) == 0.0
    u = np.array([0.6, 0.8])
    assert orthogonality_reward(np.vstack([u, u])) == pytest.approx(-1.0)


def test_orthogonality_matches_pair_loop(rng):
    P = rng.normal(size=(5, 3))
    pairs = [abs(P[i] @ P[j]) for i in range(5) for j in range(i + 1, 5)]
    assert orthogonality_reward(P) == pytest.approx(-sum(pairs) / len(pairs), rel=1e-12)


def test_creation_penalty_examples():
    assert creation_penalty(0, 3, 5.0) == 0.0
    assert creation_penalty(2, 2, 1.2) == -1.2
    lam = update_lambda(4, RewardConfig(schedule="none"))
    assert creation_penalty(2, 2, lam) == 0.0


def test_lambda_schedules():
    assert update_lambda(0, RewardConfig(schedule="exponential", b1=1.1)) == 1.0
    assert update_lambda(2, RewardConfig(schedule="exponential", b1=1.1)) == pytest.approx(1.21)
    assert update_lambda(3, RewardConfig(schedule="linear", a1=0.5)) == pytest.approx(1.5)
    assert update_lambda(5, RewardConfig(schedule="keep", initial_lambda=0.9)) == 0.9
    assert update_lambda(7, RewardConfig(schedule="none")) == 0.0


def test_exponential_lambda_monotone():
    inc = [update_lambda(t, RewardConfig(b1=1.3)) for t in range(10)]
    assert all(b > a for a, b in zip(inc, inc[1:]))
    flat = {update_lambda(t, RewardConfig(b1=1.0)) for t in range(10)}
    assert flat == {1.0}


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(schedule="cosine")
    with pytest.raises(ValueError):
        RewardConfig(lambda_d=0.0)
    with pytest.raises(ValueError):
        RewardConfig(b1=-1.0)
    with pytest.raises(ValueError):
        update_lambda(-1, RewardConfig())


def test_returns_examples():
    np.testing.assert_allclose(discounted_returns([1.0, 1.0], 0.5), [1.5, 1.0])
    r = [0.3, -1.0, 2.0, 0.5]
    np.testing.assert_allclose(discounted_returns(r, 1.0), np.cumsum(r[::-1])[::-1])


def test_returns_length_ten_against_double_sum(rng):
    r = rng.normal(size=10)
    np.testing.assert_allclose(discounted_returns(r, 0.9), double_sum_returns(r, 0.9), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=20),
    st.floats(0.01, 1.0),
)
def test_returns_recursion_property(rewards, lam):
    G = discounted_returns(rewards, lam)
    assert np.max(np.abs(G - double_sum_returns(rewards, lam))) <= 1e-12
    assert G[-1] == rewards[-1]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_reward_ranges(h, d, seed):
    rng = np.random.default_rng(seed)
    P, v = rng.normal(size=(h, d)), rng.normal(size=d)
    r = allocation_reward(P, v, int(rng.integers(h)))
    assert 0.0 < r <= 1.0
    assert orthogonality_reward(P) <= 0.0
    unit = P / np.linalg.norm(P, axis=1, keepdims=True)
    assert -1.0 - 1e-12 <= orthogonality_reward(unit) <= 0.0


def test_standardize():
    z = standardize(np.array([1.0, 2.0, 3.0]))
    assert z.mean() == pytest.approx(0.0)
    assert z.std() == pytest.approx(1.0)
    np.testing.assert_array_equal(standardize(np.array([2.0, 2.0])), [0.0, 0.0])


def test_trajectory_combines_components():
    tr = Trajectory()
    tr.record(0, None, np.array([0.5, 0.5]), 0.8, -0.5, 0.0, lambda_o=0.1)
    tr.record(1, None, np.array([0.5, 0.5]), 0.6, -0.2, -1.1, lambda_o=0.1)
    np.testing.assert_allclose(tr.rewards, [0.75, 0.6 - 0.02 - 1.1])
    G = tr.finalize(0.9)
    assert G[1] == pytest.approx(tr.rewards[1])
    assert G[0] == pytest.approx(tr.rewards[0] + 0.9 * tr.rewards[1])
    assert len(tr) == 2
