"""Episode rollouts, the two losses and joint optimisation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .allocator import EpisodeState
from .autodiff import Adam, Tensor, backward, clip_grad_norm, ops
from .dataio import SequenceDataset, Split
from .encoder import EncodedSequence
from .model import AdaSplit
from .reward import (
    RewardConfig,
    Trajectory,
    allocation_reward,
    creation_penalty,
    orthogonality_reward,
    standardize,
)

logger = logging.getLogger(__name__)

Sample = tuple[int, Sequence[int], int]  # (user, history, target)


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    beta: float = 0.1
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    neg_sample_size: int | None = None  # None: softmax over the full catalog
    seed: int = 0
    grad_clip: float = 5.0
    patience: int = 10

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.neg_sample_size is not None and self.neg_sample_size < 1:
            raise ValueError("neg_sample_size must be >= 1 or None (full catalog)")


@dataclass
class LossBreakdown:
    l_seq: float
    l_rl: float
    total: float
    mean_episode_length: float
    mean_final_h: float
    create_rate: float
    grad_norm: float = 0.0


@dataclass
class Episode:
    state: EpisodeState
    trajectory: Trajectory
    encoded: EncodedSequence


def _step_rewards(state: EpisodeState, P_after: np.ndarray, v: np.ndarray, a: int, h_before: int, lam: float):
    return (
        allocation_reward(P_after, v, a),
        orthogonality_reward(P_after),
        creation_penalty(a, h_before, lam),
    )


def rollout_episode(
    model: AdaSplit,
    user: int,
    history: Sequence[int],
    reward: RewardConfig,
    rng: np.random.Generator | None = None,
    mode: str = "sample",
    forced_actions: Sequence[int] | None = None,
    with_rewards: bool = True,
) -> Episode:
    """Encode the (truncated) history and allocate each item in order."""
    history = list(history)[-model.max_len :]
    if not history:
        raise ValueError("history must contain at least one item")
    enc = model.encoder.encode(history, user)
    alloc = model.allocator
    state = alloc.init_episode(enc.user, reward)
    traj = Trajectory()
    for t in range(len(history)):
        v = ops.gather(enc.vectors, [t])
        h_before, lam = state.h, state.lam
        forced = None if forced_actions is None else forced_actions[t]
        a, logp, dist = alloc.step(state, v, t, reward, mode, rng, forced)
        if with_rewards:
            r = _step_rewards(state, state.P_numpy(), v.data[0], a, h_before, lam)
        else:
            r = (0.0, 0.0, 0.0)
        traj.record(a, logp, dist.values, *r, reward.lambda_o)
    traj.finalize(reward.lambda_d)
    return Episode(state, traj, enc)


def rl_loss(trajectory: Trajectory, returns: np.ndarray | None = None) -> Tensor:
    """``-sum_t G_t * log pi(a_t)``; returns enter as constants."""
    G = trajectory.returns if returns is None else returns
    logps = trajectory.log_probs[0] if len(trajectory) == 1 else ops.concat(trajectory.log_probs, axis=0)
    weights = Tensor(np.asarray(G, dtype=np.float64).reshape(-1, 1))
    return ops.neg(ops.sum(ops.mul(logps, weights), keepdims=True))


def seq_loss(
    p_a: Tensor,
    target: int,
    item_embedding: Tensor,
    neg_sample_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Cross-entropy of the target under a softmax of ``p_a . v_i`` over candidates."""
    n_items = item_embedding.shape[0]
    if not 0 <= target < n_items:
        raise IndexError(f"target {target} outside catalog of {n_items} items")
    if neg_sample_size is None or neg_sample_size >= n_items - 1:
        table, pos = item_embedding, target
    else:
        negs = rng.choice(n_items - 1, size=neg_sample_size, replace=False)
        negs = negs + (negs >= target)
        table, pos = ops.gather(item_embedding, np.concatenate([[target], negs])), 0
    logits = ops.matmul(table, p_a, transpose_b=True)  # m x 1
    return ops.neg(ops.log(ops.gather(ops.softmax(logits, axis=0), [pos])))


@dataclass
class SampleForward:
    l_seq: Tensor
    episode: Episode
    target_action: int


def forward_sample(
    model: AdaSplit,
    sample: Sample,
    reward: RewardConfig,
    rng: np.random.Generator | None,
    neg_sample_size: int | None = None,
    forced_actions: Sequence[int] | None = None,
) -> SampleForward:
    """History rollout, target allocation (appended to the trajectory) and the sequence loss."""
    user, history, target = sample
    n_hist = min(len(history), model.max_len)
    hist_forced = None if forced_actions is None else forced_actions[:n_hist]
    ep = rollout_episode(model, user, history, reward, rng, "sample", hist_forced)
    state, traj = ep.state, ep.trajectory
    v_t = ops.gather(model.item_embedding, [target])
    h_before, lam = state.h, state.lam
    forced = None if forced_actions is None else forced_actions[n_hist]
    a, p_a, logp, dist = model.allocator.allocate_target(state, v_t, "sample", rng, forced)
    P_after = state.P_numpy() if a < h_before else np.vstack([state.P_numpy(), p_a.data])
    r = _step_rewards(state, P_after, v_t.data[0], a, h_before, lam)
    traj.record(a, logp, dist.values, *r, reward.lambda_o)
    traj.finalize(reward.lambda_d)
    l_seq = seq_loss(p_a, target, model.item_embedding, neg_sample_size, rng)
    return SampleForward(l_seq, ep, a)


def batch_objective(
    model: AdaSplit,
    batch: Sequence[Sample],
    cfg: TrainConfig,
    reward: RewardConfig,
    rng: np.random.Generator | None,
    forced: Sequence[Sequence[int]] | None = None,
    returns: Sequence[np.ndarray] | None = None,
) -> tuple[Tensor, Tensor, Tensor, list[SampleForward]]:
    """Mean L_seq, mean L_rl and ``L_seq + beta * L_rl`` over a batch, all on one tape.

    ``forced`` replays per-sample action lists and ``returns`` replaces the
    computed returns; together they freeze everything non-differentiable.
    """
    if not batch:
        raise ValueError("empty batch")
    fwd = [
        forward_sample(model, s, reward, rng, cfg.neg_sample_size, None if forced is None else forced[k])
        for k, s in enumerate(batch)
    ]
    if returns is not None:
        returns = [np.asarray(g, dtype=np.float64) for g in returns]
    else:
        returns = [f.episode.trajectory.returns for f in fwd]
    if reward.standardize_returns:
        flat = standardize(np.concatenate(returns))
        splits = np.cumsum([len(r) for r in returns])[:-1]
        returns = np.split(flat, splits)
    n = len(batch)
    l_seq = ops.scale(ops.sum(ops.concat([f.l_seq for f in fwd], axis=0)), 1.0 / n)
    rl_terms = [rl_loss(f.episode.trajectory, g) for f, g in zip(fwd, returns)]
    l_rl = ops.scale(ops.sum(ops.concat(rl_terms, axis=0)), 1.0 / n)
    total = ops.add(l_seq, ops.scale(l_rl, cfg.beta))
    return l_seq, l_rl, total, fwd


def _stats(fwd: list[SampleForward]) -> tuple[float, float, float]:
    lengths = [len(f.episode.trajectory) for f in fwd]
    hs = [f.episode.state.h for f in fwd]
    creates = sum(f.episode.state.T_a for f in fwd)
    return float(np.mean(lengths)), float(np.mean(hs)), creates / max(1, sum(lengths) - len(fwd))


def joint_step(
    model: AdaSplit,
    batch: Sequence[Sample],
    optimizer: Adam,
    cfg: TrainConfig,
    reward: RewardConfig,
    rng: np.random.Generator,
) -> LossBreakdown:
    """One Adam step on ``L_seq + beta * L_rl`` averaged over the batch."""
    optimizer.zero_grad()
    l_seq, l_rl, total, fwd = batch_objective(model, batch, cfg, reward, rng)
    values = {"L_seq": l_seq.item(), "L_rl": l_rl.item(), "total": total.item()}
    if not all(math.isfinite(v) for v in values.values()):
        raise NumericError(f"non-finite loss: {values}")
    backward(total)
    norm = clip_grad_norm(model.parameters().values(), cfg.grad_clip)
    optimizer.step()
    ep_len, final_h, create_rate = _stats(fwd)
    return LossBreakdown(values["L_seq"], values["L_rl"], values["total"], ep_len, final_h, create_rate, norm)


@dataclass
class TrainResult:
    best_epoch: int
    best_valid: dict | None
    log: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def train(
    model: AdaSplit,
    dataset: SequenceDataset,
    split: Split,
    cfg: TrainConfig,
    reward: RewardConfig,
    log_path: str | Path | None = None,
    timing_path: str | Path | None = None,
    select_metric: str = "ndcg10",
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Epoch loop with per-epoch validation, best-checkpoint retention and early stopping.

    On return the model holds the best-validation parameters. The JSON-lines
    log at ``log_path`` carries only deterministic fields; wall-clock times go
    to ``timing_path``.
    """
    from .evaluation import evaluate

    samples = split.training_samples()
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    best = model.snapshot()
    best_score, best_epoch, best_valid = -math.inf, 0, None
    bad_epochs = 0
    log: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    time_fh = open(timing_path, "w") if timing_path else None
    stopped = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(samples))
            parts: list[LossBreakdown] = []
            weights: list[int] = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [samples[i] for i in order[start : start + cfg.batch_size]]
                parts.append(joint_step(model, batch, optimizer, cfg, reward, rng))
                weights.append(len(batch))
            t_train = time.perf_counter() - t0
            report = evaluate(model, dataset, split, "valid", with_popularity=False)
            w = np.asarray(weights, dtype=np.float64)

            def avg(attr):
                return float(np.dot([getattr(p, attr) for p in parts], w) / w.sum()) if parts else 0.0

            record = {
                "epoch": epoch,
                "L_seq": avg("l_seq"),
                "L_rl": avg("l_rl"),
                "total": avg("total"),
                "val_ndcg5": report.ndcg5,
                "val_ndcg10": report.ndcg10,
                "val_mrr5": report.mrr5,
                "val_mrr10": report.mrr10,
                "mean_h": avg("mean_final_h"),
                "create_rate": avg("create_rate"),
                "val_mean_h": report.mean_final_h,
            }
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if time_fh:
                time_fh.write(json.dumps({"epoch": epoch, "train_seconds": t_train,
                                          "wall_seconds": time.perf_counter() - t0}) + "\n")
                time_fh.flush()
            logger.info("epoch %d  L_seq=%.4f L_rl=%.4f val NDCG@10=%.3f mean_h=%.2f",
                        epoch, record["L_seq"], record["L_rl"], report.ndcg10, record["mean_h"])
            if on_epoch:
                on_epoch(record)
            score = getattr(report, select_metric)
            if score > best_score:
                best_score, best_epoch, best_valid = score, epoch, report.as_dict()
                best = model.snapshot()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    stopped = True
                    break
    finally:
        if log_fh:
            log_fh.close()
        if time_fh:
            time_fh.close()
    model.restore(best)
    return TrainResult(best_epoch, best_valid, log, stopped)

