"""Behavior allocator: episode state, policy network, transitions and sub-sequence updaters.

Actions are 0-based here: ``0..h-1`` append to an existing sub-sequence and
``h`` creates a new one. Every vector is a ``1 x d`` row tensor; the stacked
representations ``P`` form an ``h x d`` matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops, uniform_param, zeros_param
from .reward import RewardConfig, update_lambda

UPDATERS = ("attention-gru", "lstm", "average-pooling")


@dataclass
class AllocatorConfig:
    epsilon: float = 0.5
    h_max: int = 8
    updater: str = "attention-gru"

    def __post_init__(self):
        if not math.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        if self.h_max < 1:
            raise ValueError("h_max must be >= 1")
        if self.updater not in UPDATERS:
            raise ValueError(f"updater must be one of {UPDATERS}, got {self.updater!r}")


@dataclass
class EpisodeState:
    user: Tensor  # e_u, 1 x d
    G: list[list[int]]
    P: list[Tensor]
    aux: list  # per-sub-sequence updater state (LSTM cell, member count, ...)
    T: int = 0
    T_a: int = 0
    lam: float = 0.0
    s: Tensor | None = None

    @property
    def h(self) -> int:
        return len(self.P)

    def P_matrix(self) -> Tensor:
        return self.P[0] if len(self.P) == 1 else ops.concat(self.P, axis=0)

    def P_numpy(self) -> np.ndarray:
        return np.vstack([p.data for p in self.P])

    def assignments(self) -> list[int]:
        """Sub-sequence index for each allocated position, in position order."""
        out = [-1] * self.T
        for k, g in enumerate(self.G):
            for pos in g:
                out[pos] = k
        return out


@dataclass
class ActionDistribution:
    probs: Tensor  # (h+1) x 1, or h x 1 at the cap
    scores: Tensor  # h x 1 compatibility scores in (0, 1)
    epsilon: float
    create_allowed: bool

    @property
    def values(self) -> np.ndarray:
        return self.probs.data[:, 0]

    @property
    def log_probs(self) -> np.ndarray:
        return np.log(self.values)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[0]


# -- sub-sequence representation updaters --------------------------------------


class AttentionGRU:
    """Scalar-gated GRU: update and reset gates are single numbers per step."""

    name = "attention-gru"

    def __init__(self, dim: int, rng: np.random.Generator, prefix: str = "allocator.gru."):
        self.w_z = uniform_param(rng, (dim, 1), prefix + "w_z")
        self.u_z = uniform_param(rng, (dim, 1), prefix + "u_z")
        self.w_r = uniform_param(rng, (dim, 1), prefix + "w_r")
        self.u_r = uniform_param(rng, (dim, 1), prefix + "u_r")
        self.w = uniform_param(rng, (dim, dim), prefix + "w")
        self.u = uniform_param(rng, (dim, dim), prefix + "u")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w_z, self.u_z, self.w_r, self.u_r, self.w, self.u)}

    def initial_aux(self):
        return None

    def step(self, p: Tensor, aux, v: Tensor):
        z = ops.sigmoid(ops.add(ops.matmul(v, self.w_z), ops.matmul(p, self.u_z)))
        r = ops.sigmoid(ops.add(ops.matmul(v, self.w_r), ops.matmul(p, self.u_r)))
        cand = ops.tanh(ops.add(ops.matmul(v, self.w), ops.matmul(ops.mul(r, p), self.u)))
        # z * p + (1 - z) * cand == cand + z * (p - cand)
        new_p = ops.add(cand, ops.mul(z, ops.add(p, ops.neg(cand))))
        return new_p, None

    def step_numpy(self, p: np.ndarray, aux, V: np.ndarray) -> np.ndarray:
        """Vectorised update of one representation ``p`` (d,) with each row of ``V``."""
        z = _sigmoid(V @ self.w_z.data[:, 0] + p @ self.u_z.data[:, 0])[:, None]
        r = _sigmoid(V @ self.w_r.data[:, 0] + p @ self.u_r.data[:, 0])[:, None]
        cand = np.tanh(V @ self.w.data + (r * p[None, :]) @ self.u.data)
        return z * p[None, :] + (1.0 - z) * cand


class LSTMUpdater:
    """Standard LSTM cell with vector gates; the cell state lives in ``aux``."""

    name = "lstm"
    GATES = ("i", "f", "o", "g")

    def __init__(self, dim: int, rng: np.random.Generator, prefix: str = "allocator.lstm."):
        self.dim = dim
        self.w = {g: uniform_param(rng, (dim, dim), prefix + f"w_{g}") for g in self.GATES}
        self.u = {g: uniform_param(rng, (dim, dim), prefix + f"u_{g}") for g in self.GATES}
        self.b = {g: zeros_param((dim,), prefix + f"b_{g}") for g in self.GATES}

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for g in self.GATES:
            for t in (self.w[g], self.u[g], self.b[g]):
                out[t.name] = t
        return out

    def initial_aux(self):
        return Tensor(np.zeros((1, self.dim)))

    def _pre(self, g, p, v):
        return ops.add(ops.add(ops.matmul(v, self.w[g]), ops.matmul(p, self.u[g])), self.b[g])

    def step(self, p: Tensor, aux, v: Tensor):
        i = ops.sigmoid(self._pre("i", p, v))
        f = ops.sigmoid(self._pre("f", p, v))
        o = ops.sigmoid(self._pre("o", p, v))
        g = ops.tanh(self._pre("g", p, v))
        c = ops.add(ops.mul(f, aux), ops.mul(i, g))
        return ops.mul(o, ops.tanh(c)), c

    def step_numpy(self, p: np.ndarray, aux, V: np.ndarray) -> np.ndarray:
        c0 = np.ravel(aux.data)

        def pre(g):
            return V @ self.w[g].data + p @ self.u[g].data + self.b[g].data

        i, f, o = _sigmoid(pre("i")), _sigmoid(pre("f")), _sigmoid(pre("o"))
        c = f * c0[None, :] + i * np.tanh(pre("g"))
        return o * np.tanh(c)


class AveragePooling:
    """Running mean of member item vectors; the initial representation is discarded."""

    name = "average-pooling"

    def __init__(self, dim: int, rng: np.random.Generator | None = None, prefix: str = ""):
        self.dim = dim

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def initial_aux(self):
        return 0

    def step(self, p: Tensor, aux, v: Tensor):
        n = int(aux)
        new_p = ops.add(ops.scale(p, n / (n + 1)), ops.scale(v, 1.0 / (n + 1)))
        return new_p, n + 1

    def step_numpy(self, p: np.ndarray, aux, V: np.ndarray) -> np.ndarray:
        n = int(aux)
        return (n / (n + 1)) * p[None, :] + V / (n + 1)


def make_updater(name: str, dim: int, rng: np.random.Generator):
    if name == "attention-gru":
        return AttentionGRU(dim, rng)
    if name == "lstm":
        return LSTMUpdater(dim, rng)
    if name == "average-pooling":
        return AveragePooling(dim, rng)
    raise ValueError(f"unknown updater {name!r}; expected one of {UPDATERS}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# -- the allocator ---------------------------------------------------------------


class Allocator:
    def __init__(self, dim: int, config: AllocatorConfig, rng: np.random.Generator):
        self.dim = dim
        self.config = config
        d, half = dim, max(1, math.ceil(dim / 2))
        self.w_0 = uniform_param(rng, (2 * d, d), "allocator.state.w_0")
        self.w_s = uniform_param(rng, (d, d), "allocator.state.w_s")
        self.w_p = uniform_param(rng, (d, d), "allocator.state.w_p")
        self.w_p1 = uniform_param(rng, (2 * d, d), "allocator.policy.w_1")
        self.b_p1 = zeros_param((d,), "allocator.policy.b_1")
        self.w_p2 = uniform_param(rng, (d, half), "allocator.policy.w_2")
        self.b_p2 = zeros_param((half,), "allocator.policy.b_2")
        self.w_p3 = uniform_param(rng, (half, 1), "allocator.policy.w_3")
        self.b_p3 = zeros_param((1,), "allocator.policy.b_3")
        self.updater = make_updater(config.updater, dim, rng)
        self._ones: dict[int, Tensor] = {}
        self._eps = Tensor(np.array([[config.epsilon]]))

    def parameters(self) -> dict[str, Tensor]:
        own = (self.w_0, self.w_s, self.w_p, self.w_p1, self.b_p1, self.w_p2, self.b_p2, self.w_p3, self.b_p3)
        out = {t.name: t for t in own}
        out.update(self.updater.parameters())
        return out

    # episode mechanics

    def init_episode(self, e_u: Tensor, reward: RewardConfig | None = None) -> EpisodeState:
        lam = update_lambda(0, reward) if reward is not None else 0.0
        return EpisodeState(user=e_u, G=[[]], P=[e_u], aux=[self.updater.initial_aux()], lam=lam, s=e_u)

    def global_state(self, P: Tensor, v: Tensor) -> Tensor:
        """Attention-pooled representation concatenated with the item, projected to d."""
        z = ops.softmax(ops.matmul(v, P, transpose_b=True), axis=-1)  # 1 x h
        pooled = ops.matmul(z, P)
        return ops.matmul(ops.concat([pooled, v], axis=1), self.w_0)

    def per_subseq_state(self, s: Tensor, p: Tensor) -> Tensor:
        return ops.concat([ops.matmul(s, self.w_s), ops.matmul(p, self.w_p)], axis=1)

    def subseq_states(self, s: Tensor, P: Tensor) -> Tensor:
        """All ``h`` per-sub-sequence states stacked into an ``h x 2d`` matrix."""
        h = P.shape[0]
        if h not in self._ones:
            self._ones[h] = Tensor(np.ones((h, 1)))
        tiled = ops.matmul(self._ones[h], ops.matmul(s, self.w_s))
        return ops.concat([tiled, ops.matmul(P, self.w_p)], axis=1)

    def policy_scores(self, states: Tensor) -> Tensor:
        hidden = ops.relu(ops.add(ops.matmul(states, self.w_p1), self.b_p1))
        hidden = ops.add(ops.matmul(hidden, self.w_p2), self.b_p2)
        return ops.sigmoid(ops.add(ops.matmul(hidden, self.w_p3), self.b_p3))

    def action_distribution(self, scores: Tensor, epsilon: float | None = None) -> ActionDistribution:
        h = scores.shape[0]
        eps = self._eps if epsilon is None else Tensor(np.array([[epsilon]]))
        allowed = h < self.config.h_max
        logits = ops.concat([scores, eps], axis=0) if allowed else scores
        return ActionDistribution(ops.softmax(logits, axis=0), scores, float(eps.data[0, 0]), allowed)

    def distribution(self, state: EpisodeState, v: Tensor) -> ActionDistribution:
        P = state.P_matrix()
        state.s = self.global_state(P, v)
        return self.action_distribution(self.policy_scores(self.subseq_states(state.s, P)))

    def update_subseq_rep(self, p: Tensor, v: Tensor, aux=None):
        if aux is None:
            aux = self.updater.initial_aux()
        return self.updater.step(p, aux, v)

    def apply_action(self, state: EpisodeState, a: int, v: Tensor, position: int, reward: RewardConfig | None = None):
        h = state.h
        if not 0 <= a <= h or (a == h and h >= self.config.h_max):
            raise ValueError(f"action {a} out of range for h={h} (h_max={self.config.h_max})")
        if position != state.T:
            raise ValueError(f"position {position} does not match step {state.T}")
        if a < h:
            state.G[a].append(position)
            state.P[a], state.aux[a] = self.updater.step(state.P[a], state.aux[a], v)
        else:
            new_p, aux = self.updater.step(state.user, self.updater.initial_aux(), v)
            state.G.append([position])
            state.P.append(new_p)
            state.aux.append(aux)
            state.T_a += 1
            state.lam = update_lambda(state.T_a, reward) if reward is not None else state.lam
        state.T += 1
        return state

    @staticmethod
    def choose(dist: ActionDistribution, mode: str, rng: np.random.Generator | None) -> int:
        probs = dist.values
        if mode == "argmax":
            return int(np.argmax(probs))
        if mode == "sample":
            if rng is None:
                raise ValueError("sampling needs an rng")
            # inverse-CDF on a single uniform keeps rng consumption fixed per step
            c = np.cumsum(probs)
            return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(probs) - 1))
        raise ValueError(f"mode must be 'sample' or 'argmax', got {mode!r}")

    @staticmethod
    def log_prob(dist: ActionDistribution, a: int) -> Tensor:
        return ops.log(ops.gather(dist.probs, [a]))

    def step(self, state, v, position, reward=None, mode="sample", rng=None, forced: int | None = None):
        """Score, choose and apply one history allocation; returns ``(a, log_prob, dist)``."""
        dist = self.distribution(state, v)
        a = self.choose(dist, mode, rng) if forced is None else int(forced)
        if not 0 <= a < dist.n_actions:
            raise ValueError(f"action {a} out of range for {dist.n_actions} actions")
        logp = self.log_prob(dist, a)
        self.apply_action(state, a, v, position, reward)
        return a, logp, dist

    def allocate_target(self, state, v_target: Tensor, mode="sample", rng=None, forced: int | None = None):
        """Pick the sub-sequence for a target/candidate item without mutating ``state``.

        Returns ``(a, p_a, log_prob, dist)``; on create, ``p_a`` is the user
        embedding updated with ``v_target``.
        """
        dist = self.distribution(state, v_target)
        a = self.choose(dist, mode, rng) if forced is None else int(forced)
        if not 0 <= a < dist.n_actions:
            raise ValueError(f"action {a} out of range for {dist.n_actions} actions")
        if a < state.h:
            p_a = state.P[a]
        else:
            p_a, _ = self.updater.step(state.user, self.updater.initial_aux(), v_target)
        return a, p_a, self.log_prob(dist, a), dist

    # vectorised scoring for evaluation

    def target_allocation_numpy(self, state: EpisodeState, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Argmax allocation of every candidate row of ``V``.

        Returns ``(actions, p_a)`` with ``p_a`` the ``m x d`` representation each
        candidate is scored against. Mirrors :meth:`allocate_target` in argmax mode.
        """
        P = state.P_numpy()
        h, d = P.shape
        logits = V @ P.T  # m x h
        logits = logits - logits.max(axis=1, keepdims=True)
        z = np.exp(logits)
        z /= z.sum(axis=1, keepdims=True)
        s = np.concatenate([z @ P, V], axis=1) @ self.w_0.data  # m x d
        s_proj = s @ self.w_s.data  # m x d
        p_proj = P @ self.w_p.data  # h x d
        w1 = self.w_p1.data
        # first policy layer split across the two halves of the concatenated state
        pre_s = s_proj @ w1[:d]  # m x d
        pre_p = p_proj @ w1[d:] + self.b_p1.data  # h x d
        hidden = np.maximum(pre_s[:, None, :] + pre_p[None, :, :], 0.0)  # m x h x d
        hidden = hidden @ self.w_p2.data + self.b_p2.data
        scores = _sigmoid(hidden @ self.w_p3.data + self.b_p3.data)[..., 0]  # m x h
        if h < self.config.h_max:
            scores = np.concatenate([scores, np.full((V.shape[0], 1), self.config.epsilon)], axis=1)
        actions = np.argmax(scores, axis=1)  # softmax is monotone, argmax of logits suffices
        p_a = np.empty_like(V)
        existing = actions < h
        p_a[existing] = P[actions[existing]]
        if not existing.all():
            created = ~existing
            p_a[created] = self.updater.step_numpy(state.user.data[0], self.updater.initial_aux(), V[created])
        return actions, p_a
