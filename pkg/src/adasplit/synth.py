"""Synthetic multi-interest sequences with planted partitions, and partition agreement (NMI)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import SequenceDataset, compute_stats, write_canonical


@dataclass
class SyntheticConfig:
    K: int = 3
    items_per_interest: int = 30
    users: int = 200
    seq_len: int = 20
    switch_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.items_per_interest < 1:
            raise ValueError("items_per_interest must be >= 1")
        if self.users < 2:
            raise ValueError("need at least 2 users")
        if self.seq_len < 3:
            raise ValueError("seq_len must be >= 3")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ValueError("switch_prob must lie in [0, 1]")

    @property
    def n_items(self) -> int:
        return self.K * self.items_per_interest


@dataclass
class GroundTruth:
    labels: list[list[int]]  # per user, per position: interest in 0..K-1
    interests: list[list[int]]  # the subset each user draws from

    def item_interest(self, item: int, items_per_interest: int) -> int:
        return item // items_per_interest


def generate(config: SyntheticConfig) -> tuple[SequenceDataset, GroundTruth]:
    """Markov interest switching over per-user interest subsets.

    Each user draws between ``min(2, K)`` and ``K`` interests. The first
    interest is uniform over the subset; afterwards, with probability
    ``switch_prob`` the next item comes from a different interest in the
    subset (uniformly). Items are uniform within their interest's block of
    ``items_per_interest`` consecutive ids.
    """
    rng = np.random.default_rng(config.seed)
    K, n_per = config.K, config.items_per_interest
    sequences, labels, subsets = [], [], []
    for _ in range(config.users):
        m = int(rng.integers(min(2, K), K + 1))
        subset = sorted(int(k) for k in rng.choice(K, size=m, replace=False))
        cur = subset[int(rng.integers(m))]
        seq, lab = [], []
        for t in range(config.seq_len):
            if t > 0 and m > 1 and rng.random() < config.switch_prob:
                others = [k for k in subset if k != cur]
                cur = others[int(rng.integers(len(others)))]
            seq.append(cur * n_per + int(rng.integers(n_per)))
            lab.append(cur)
        sequences.append(seq)
        labels.append(lab)
        subsets.append(subset)
    dataset = SequenceDataset(
        user_ids=[f"u{u}" for u in range(config.users)],
        item_ids=[f"i{i}" for i in range(config.n_items)],
        sequences=sequences,
        timestamps=[list(range(config.seq_len)) for _ in range(config.users)],
        stats=compute_stats(sequences, config.n_items),
    )
    return dataset, GroundTruth(labels, subsets)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def partition_agreement(assignments: Sequence[int], labels: Sequence[int]) -> float:
    """Normalised mutual information (arithmetic-mean normalisation).

    Two single-cluster labelings count as perfect agreement (1.0).
    """
    a = np.asarray(assignments)
    b = np.asarray(labels)
    if a.size == 0:
        raise ValueError("empty labelings")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    n = a.size
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(np.clip(mi / ((ha + hb) / 2.0), 0.0, 1.0))


def write_synthetic(dataset: SequenceDataset, truth: GroundTruth, config: SyntheticConfig, out_dir) -> dict:
    """Canonical dataset files plus ``labels.json`` (per-user interest labels)."""
    paths = write_canonical(dataset, out_dir)
    labels_path = Path(out_dir) / "dataset.labels.json"
    labels_path.write_text(
        json.dumps({"config": asdict(config), "labels": truth.labels, "interests": truth.interests}) + "\n"
    )
    paths["labels"] = labels_path
    return paths


def disentanglement_report(model, dataset: SequenceDataset, truth: GroundTruth, users: Sequence[int] | None = None):
    """Greedy allocation of each user's test input vs. the planted labels.

    Returns ``(mean NMI, mean final h, per-user NMI list)``.
    """
    from .evaluation import rollout_argmax

    users = range(dataset.n_users) if users is None else users
    scores, hs = [], []
    for u in users:
        items = dataset.sequences[u][:-1][-model.max_len :]
        lab = truth.labels[u][: len(dataset.sequences[u]) - 1][-model.max_len :]
        state = rollout_argmax(model, u, items)
        scores.append(partition_agreement(state.assignments(), lab))
        hs.append(state.h)
    return float(np.mean(scores)), float(np.mean(hs)), scores
