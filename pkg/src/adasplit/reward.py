"""Allocator rewards, the curriculum penalty schedule and discounted returns.

Rewards are plain floats computed from detached representation values, so no
gradient can flow through them; only the log-probabilities carry gradient in
the policy loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCHEDULES = ("exponential", "linear", "keep", "none")


@dataclass
class RewardConfig:
    lambda_o: float = 0.1  # orthogonality weight
    lambda_d: float = 0.9  # return decay
    schedule: str = "exponential"
    a1: float = 1.1  # linear slope
    b1: float = 1.1  # exponential base
    initial_lambda: float = 1.0  # used by "keep"
    standardize_returns: bool = False

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 < self.lambda_d <= 1:
            raise ValueError(f"lambda_d must lie in (0, 1], got {self.lambda_d}")
        if self.a1 <= 0 or self.b1 <= 0:
            raise ValueError("a1 and b1 must be positive")
        for name in ("lambda_o", "initial_lambda"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def allocation_reward(P: np.ndarray, v: np.ndarray, a: int) -> float:
    """Softmax share of sub-sequence ``a`` among inner products ``P @ v`` (0-based ``a``)."""
    P = np.atleast_2d(P)
    logits = P @ np.ravel(v)
    logits = logits - logits.max()
    e = np.exp(logits)
    return float(e[a] / e.sum())


def orthogonality_reward(P: np.ndarray) -> float:
    """Negative mean absolute pairwise inner product; 0 for a single representation."""
    P = np.atleast_2d(P)
    h = P.shape[0]
    if h < 2:
        return 0.0
    gram = np.abs(P @ P.T)
    iu = np.triu_indices(h, k=1)
    return -float(gram[iu].sum()) / (h * (h - 1) / 2)


def creation_penalty(a: int, h: int, lam: float) -> float:
    """``-lam`` when ``a`` is the create action (index ``h`` in 0-based terms), else 0."""
    return -float(lam) if a == h and lam != 0 else 0.0


def update_lambda(t_a: int, config: RewardConfig) -> float:
    if t_a < 0:
        raise ValueError("create count must be non-negative")
    if config.schedule == "linear":
        return config.a1 * t_a
    if config.schedule == "exponential":
        return config.b1**t_a
    if config.schedule == "keep":
        return config.initial_lambda
    return 0.0


def combined_reward(r_loss: float, r_ort: float, r_creat: float, lambda_o: float) -> float:
    return r_loss + lambda_o * r_ort + r_creat


def discounted_returns(rewards, lambda_d: float) -> np.ndarray:
    """``G[t] = r[t] + lambda_d * G[t+1]`` with the last return equal to the last reward."""
    if not 0 < lambda_d <= 1:
        raise ValueError(f"lambda_d must lie in (0, 1], got {lambda_d}")
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + lambda_d * acc
        out[t] = acc
    return out


def standardize(returns: np.ndarray) -> np.ndarray:
    if returns.size < 2:
        return returns - returns.mean() if returns.size else returns
    std = returns.std()
    return (returns - returns.mean()) / (std if std > 1e-12 else 1.0)


@dataclass
class Trajectory:
    """Per-step record of one allocation episode."""

    actions: list[int] = field(default_factory=list)
    log_probs: list = field(default_factory=list)  # scalar Tensors, kept on the tape
    probs: list[np.ndarray] = field(default_factory=list)
    r_loss: list[float] = field(default_factory=list)
    r_ort: list[float] = field(default_factory=list)
    r_creat: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.actions)

    def record(self, action, log_prob, probs, r_loss, r_ort, r_creat, lambda_o) -> None:
        self.actions.append(int(action))
        self.log_probs.append(log_prob)
        self.probs.append(probs)
        self.r_loss.append(r_loss)
        self.r_ort.append(r_ort)
        self.r_creat.append(r_creat)
        self.rewards.append(combined_reward(r_loss, r_ort, r_creat, lambda_o))

    def finalize(self, lambda_d: float) -> np.ndarray:
        self.returns = discounted_returns(self.rewards, lambda_d)
        return self.returns
