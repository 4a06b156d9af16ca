"""Full-catalog ranking evaluation (NDCG@K / MRR@K) and the popularity floor."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .allocator import EpisodeState
from .autodiff import no_grad, ops
from .dataio import SequenceDataset, Split
from .model import AdaSplit
from .reward import RewardConfig

CUTOFFS = (5, 10)


def ndcg_at_k(rank: int, k: int) -> float:
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def mrr_at_k(rank: int, k: int) -> float:
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1.0 / rank if rank <= k else 0.0


def rank_of(scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target``; equal scores are ordered by item id ascending."""
    s = scores[target]
    return 1 + int(np.count_nonzero(scores > s)) + int(np.count_nonzero(scores[:target] == s))


@dataclass
class RankingResult:
    users: list[int] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    target_subseq: list[int] = field(default_factory=list)
    final_h: list[int] = field(default_factory=list)


@dataclass
class MetricReport:
    ndcg5: float
    mrr5: float
    ndcg10: float
    mrr10: float
    users: int
    mean_final_h: float = float("nan")
    popularity: "MetricReport | None" = None

    def as_dict(self) -> dict:
        d = asdict(self)
        if self.popularity is None:
            d.pop("popularity")
        return d

    def row(self) -> str:
        return f"{self.ndcg5:.2f} & {self.mrr5:.2f} & {self.ndcg10:.2f} & {self.mrr10:.2f}"


def metrics_from_ranks(ranks: Sequence[int], mean_final_h: float = float("nan")) -> MetricReport:
    """Average the per-user metrics and report them as percentages."""
    ranks = list(ranks)
    n = len(ranks)
    if n == 0:
        return MetricReport(0.0, 0.0, 0.0, 0.0, 0, mean_final_h)

    def avg(fn, k):
        return 100.0 * sum(fn(r, k) for r in ranks) / n

    return MetricReport(avg(ndcg_at_k, 5), avg(mrr_at_k, 5), avg(ndcg_at_k, 10), avg(mrr_at_k, 10), n, mean_final_h)


@no_grad()
def rollout_argmax(model: AdaSplit, user: int, items: Sequence[int]) -> EpisodeState:
    """Allocate the (truncated) input sequence greedily, without recording a tape."""
    items = list(items)[-model.max_len :]
    enc = model.encoder.encode(items, user)
    alloc = model.allocator
    state = alloc.init_episode(enc.user, RewardConfig(schedule="none"))
    for t in range(len(items)):
        alloc.step(state, ops.gather(enc.vectors, [t]), t, None, "argmax", None)
    return state


@no_grad()
def score_candidates(model: AdaSplit, state: EpisodeState, candidates: Sequence[int] | None = None):
    """Score candidates by ``p_a . v`` with ``a`` each candidate's argmax allocation.

    Returns ``(scores, actions)``; ``candidates=None`` scores the whole catalog.
    """
    V = model.item_embedding.data
    if candidates is not None:
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.size == 0:
            raise ValueError("empty candidate set")
        V = V[candidates]
    actions, p_a = model.allocator.target_allocation_numpy(state, V)
    return np.einsum("ij,ij->i", p_a, V), actions


@no_grad()
def score_candidates_loop(model: AdaSplit, state: EpisodeState, candidates: Sequence[int]):
    """Per-candidate recomputation through the tensor path (reference for the vectorised scorer)."""
    scores, actions = [], []
    for c in candidates:
        v = ops.gather(model.item_embedding, [int(c)])
        a, p_a, _, _ = model.allocator.allocate_target(state, v, "argmax")
        scores.append(float((p_a.data @ v.data.T)[0, 0]))
        actions.append(a)
    return np.asarray(scores), np.asarray(actions)


def popularity_scores(split: Split, n_items: int) -> np.ndarray:
    counts = Counter(i for us in split.users for i in us.train_prefix)
    out = np.zeros(n_items)
    for i, c in counts.items():
        out[i] = c
    return out


def _mask_history(scores: np.ndarray, items: Sequence[int]) -> np.ndarray:
    scores = scores.copy()
    scores[list(items)] = -np.inf
    return scores


def rank_users(
    model: AdaSplit,
    split: Split,
    phase: str,
    exclude_history: bool = False,
) -> RankingResult:
    res = RankingResult()
    for user, items, target in split.eval_samples(phase):
        state = rollout_argmax(model, user, items)
        scores, actions = score_candidates(model, state)
        if exclude_history:
            scores = _mask_history(scores, items)
        res.users.append(user)
        res.ranks.append(rank_of(scores, target))
        res.target_subseq.append(int(actions[target]))
        res.final_h.append(state.h)
    return res


def popularity_ranks(split: Split, n_items: int, phase: str, exclude_history: bool = False) -> list[int]:
    pop = popularity_scores(split, n_items)
    ranks = []
    for _, items, target in split.eval_samples(phase):
        scores = _mask_history(pop, items) if exclude_history else pop
        ranks.append(rank_of(scores, target))
    return ranks


def evaluate(
    model: AdaSplit,
    dataset: SequenceDataset,
    split: Split,
    phase: str = "test",
    exclude_history: bool = False,
    with_popularity: bool = True,
    return_ranks: bool = False,
):
    """Full-ranking metrics for ``phase`` ('valid' or 'test'), in percent.

    With ``return_ranks`` the per-user :class:`RankingResult` is returned alongside.
    """
    res = rank_users(model, split, phase, exclude_history)
    report = metrics_from_ranks(res.ranks, float(np.mean(res.final_h)) if res.final_h else float("nan"))
    if with_popularity:
        report.popularity = metrics_from_ranks(popularity_ranks(split, dataset.n_items, phase, exclude_history))
    return (report, res) if return_ranks else report
