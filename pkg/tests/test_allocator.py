import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adasplit.allocator import Allocator, AllocatorConfig, make_updater
from adasplit.autodiff import Tensor, ops
from adasplit.reward import RewardConfig
from gradcheck import check_tensor_fn


def make(dim=6, seed=0, **cfg):
    return Allocator(dim, AllocatorConfig(**cfg), np.random.default_rng(seed))


def row(rng, d):
    return Tensor(rng.normal(size=(1, d)))


def test_equal_scores_give_uniform_distribution():
    alloc = make(epsilon=0.5)
    dist = alloc.action_distribution(Tensor([[0.5], [0.5]]))
    np.testing.assert_allclose(dist.values, [1 / 3] * 3, atol=1e-15)


def test_single_score_against_epsilon():
    dist = make(epsilon=0.5).action_distribution(Tensor([[0.9]]))
    e1, e2 = math.exp(0.9), math.exp(0.5)
    np.testing.assert_allclose(dist.values, [e1 / (e1 + e2), e2 / (e1 + e2)], rtol=1e-12)
    assert dist.values[0] == pytest.approx(0.5987, abs=1e-4)


def test_cap_removes_create_logit():
    alloc = make(h_max=2)
    dist = alloc.action_distribution(Tensor([[0.2], [0.7]]))
    assert dist.n_actions == 2
    assert not dist.create_allowed


def test_raising_epsilon_raises_create_probability(rng):
    alloc = make()
    scores = Tensor(rng.uniform(size=(3, 1)))
    p = [alloc.action_distribution(scores, eps).values[-1] for eps in (0.2, 0.4, 0.6, 0.8)]
    assert all(b > a for a, b in zip(p, p[1:]))


def test_create_then_assign(rng):
    alloc = make()
    state = alloc.init_episode(row(rng, 6), RewardConfig(b1=1.1))
    assert state.h == 1 and state.lam == 1.0
    v0, v1, v2 = row(rng, 6), row(rng, 6), row(rng, 6)
    alloc.apply_action(state, 1, v0, 0, RewardConfig(b1=1.1))
    assert state.h == 2 and state.T_a == 1 and state.lam == pytest.approx(1.1)
    alloc.apply_action(state, 0, v1, 1)
    alloc.apply_action(state, 1, v2, 2)
    assert state.G == [[1], [0, 2]]
    assert state.assignments() == [1, 0, 1]


def test_created_subsequence_starts_from_user(rng):
    alloc = make()
    e_u, v = row(rng, 6), row(rng, 6)
    state = alloc.init_episode(e_u)
    alloc.apply_action(state, 1, v, 0)
    expected, _ = alloc.updater.step(e_u, None, v)
    np.testing.assert_array_equal(state.P[1].data, expected.data)
    np.testing.assert_array_equal(state.P[0].data, e_u.data)


def test_invalid_actions(rng):
    alloc = make(h_max=1)
    state = alloc.init_episode(row(rng, 6))
    with pytest.raises(ValueError):
        alloc.apply_action(state, 1, row(rng, 6), 0)
    with pytest.raises(ValueError):
        alloc.apply_action(state, 0, row(rng, 6), 3)
    with pytest.raises(ValueError):
        alloc.choose(alloc.action_distribution(Tensor([[0.3]])), "greedy", None)
    with pytest.raises(ValueError):
        AllocatorConfig(updater="transformer")


def test_argmax_and_seeded_sampling(rng):
    alloc = make()
    dist = alloc.action_distribution(Tensor([[0.1], [0.9], [0.3]]))
    assert alloc.choose(dist, "argmax", None) == 1
    a = [alloc.choose(dist, "sample", np.random.default_rng(7)) for _ in range(3)]
    assert len(set(a)) == 1


def test_sample_frequencies_within_binomial_bounds():
    alloc = make(epsilon=0.5)
    dist = alloc.action_distribution(Tensor([[0.1], [0.95], [0.4]]))
    n = 100_000
    gen = np.random.default_rng(11)
    counts = np.bincount([alloc.choose(dist, "sample", gen) for _ in range(n)], minlength=4)
    p = dist.values
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma), (counts, n * p)


def test_allocate_target_does_not_mutate(rng):
    alloc = make()
    state = alloc.init_episode(row(rng, 6))
    for t in range(4):
        alloc.step(state, row(rng, 6), t, None, "sample", rng)
    before = (state.h, state.T, [list(g) for g in state.G], state.P_numpy().copy())
    alloc.allocate_target(state, row(rng, 6), "sample", rng)
    assert (state.h, state.T, state.G) == before[:3]
    np.testing.assert_array_equal(state.P_numpy(), before[3])


def test_forced_create_target_uses_user_update(rng):
    alloc = make()
    state = alloc.init_episode(row(rng, 6))
    alloc.step(state, row(rng, 6), 0, None, "argmax", None, forced=0)
    v = row(rng, 6)
    a, p_a, _, _ = alloc.allocate_target(state, v, forced=state.h)
    assert a == 1
    np.testing.assert_array_equal(p_a.data, alloc.updater.step(state.user, None, v)[0].data)


@pytest.mark.parametrize("updater", ["attention-gru", "lstm", "average-pooling"])
def test_vectorised_target_allocation_matches_tensor_path(updater, rng):
    alloc = make(dim=5, updater=updater, h_max=4, epsilon=0.55)
    state = alloc.init_episode(row(rng, 5))
    for t in range(6):
        alloc.step(state, row(rng, 5), t, None, "sample", rng)
    V = rng.normal(size=(25, 5))
    actions, p_a = alloc.target_allocation_numpy(state, V)
    for k in range(len(V)):
        a, p, _, _ = alloc.allocate_target(state, Tensor(V[k : k + 1]), "argmax")
        assert a == actions[k]
        np.testing.assert_allclose(p.data[0], p_a[k], atol=1e-12)


@pytest.mark.parametrize("updater", ["attention-gru", "lstm", "average-pooling"])
def test_updater_numpy_matches_tensor(updater, rng):
    up = make_updater(updater, 4, rng)
    p = row(rng, 4)
    aux = up.initial_aux()
    V = rng.normal(size=(3, 4))
    fast = up.step_numpy(p.data[0], aux, V)
    for k in range(3):
        slow, _ = up.step(p, aux, Tensor(V[k : k + 1]))
        np.testing.assert_allclose(slow.data[0], fast[k], atol=1e-13)


def test_average_pooling_is_running_mean(rng):
    alloc = make(dim=3, updater="average-pooling")
    state = alloc.init_episode(row(rng, 3))
    vs = [row(rng, 3) for _ in range(3)]
    alloc.apply_action(state, 1, vs[0], 0)
    alloc.apply_action(state, 1, vs[1], 1)
    alloc.apply_action(state, 1, vs[2], 2)
    np.testing.assert_allclose(state.P[1].data[0], np.mean([v.data[0] for v in vs], axis=0), atol=1e-15)


def test_policy_scores_match_manual_mlp(rng):
    alloc = make(dim=4)
    S = rng.normal(size=(3, 8))
    h1 = np.maximum(S @ alloc.w_p1.data + alloc.b_p1.data, 0)
    h2 = h1 @ alloc.w_p2.data + alloc.b_p2.data
    expected = 1 / (1 + np.exp(-(h2 @ alloc.w_p3.data + alloc.b_p3.data)))
    np.testing.assert_allclose(alloc.policy_scores(Tensor(S)).data, expected, atol=1e-14)
    assert alloc.w_p2.shape == (4, 2)


def test_global_state_matches_manual(rng):
    alloc = make(dim=4)
    P, v = rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
    z = np.exp(v @ P.T)
    z /= z.sum()
    expected = np.concatenate([z @ P, v], axis=1) @ alloc.w_0.data
    np.testing.assert_allclose(alloc.global_state(Tensor(P), Tensor(v)).data, expected, atol=1e-14)


@pytest.mark.parametrize("updater", ["attention-gru", "lstm"])
def test_log_prob_gradient_with_frozen_actions(updater, rng):
    alloc = make(dim=4, updater=updater, seed=2)
    e_u = row(rng, 4)
    vs = [row(rng, 4) for _ in range(4)]
    actions = [1, 0, 2, 1]
    params = list(alloc.parameters().values())

    def build():
        state = alloc.init_episode(e_u)
        total = None
        for t, (v, a) in enumerate(zip(vs, actions)):
            _, lp, _ = alloc.step(state, v, t, forced=a)
            total = lp if total is None else ops.add(total, lp)
        return total

    assert check_tensor_fn(build, params, step=1e-5) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 5))
def test_partition_property(seed, length, h_max):
    gen = np.random.default_rng(seed)
    alloc = Allocator(3, AllocatorConfig(h_max=h_max, epsilon=float(gen.uniform(0.2, 0.8))), gen)
    state = alloc.init_episode(row(gen, 3))
    for t in range(length):
        _, _, dist = alloc.step(state, row(gen, 3), t, None, "sample", gen)
        assert abs(dist.values.sum() - 1.0) <= 1e-6
    members = sorted(p for g in state.G for p in g)
    assert members == list(range(length))
    assert state.h <= h_max
    assert all(len(g) > 0 for g in state.G[1:])
