"""End-to-end experiment plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .autodiff import no_grad, ops
from .config import ExperimentConfig
from .dataio import SequenceDataset, Split, build_dataset, leave_one_out_split, load_interactions, read_canonical
from .evaluation import MetricReport, evaluate
from .model import AdaSplit, ModelConfig
from .reward import RewardConfig
from .synth import GroundTruth, disentanglement_report, generate
from .trainer import TrainResult, train

logger = logging.getLogger(__name__)

ABLATIONS = {
    "encoder": ("encoder.mode", ["bidirectional", "causal", "zero"]),
    "updater": ("allocator.updater", ["attention-gru", "lstm", "average-pooling"]),
    "schedule": ("reward.schedule", ["exponential", "linear", "keep", "none"]),
    "length": ("encoder.max_len", [5, 10, 15, 20, 25, 30, 35, 40]),
}

GRIDS = {
    "epsilon": ("allocator.epsilon", [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
    "lr": ("train.lr", [0.01, 0.001, 0.0001]),
    "batch_size": ("train.batch_size", [32, 64, 128, 256]),
    "lambda_o": ("reward.lambda_o", [1.0, 0.1, 0.01, 0.001]),
    "beta": ("train.beta", [1.0, 0.1, 0.01, 0.001]),
    "b1": ("reward.b1", [0.9, 1.0, 1.1, 1.2, 1.3]),
}

SYNTH_NMI_MIN = 0.5
SYNTH_H_RANGE = (2.0, 4.0)


@dataclass
class Data:
    dataset: SequenceDataset
    split: Split
    truth: GroundTruth | None = None


def load_data(cfg: ExperimentConfig) -> Data:
    ds_cfg = cfg.dataset
    if ds_cfg.format == "synthetic":
        dataset, truth = generate(ds_cfg.synthetic)
        return Data(dataset, leave_one_out_split(dataset), truth)
    if ds_cfg.format == "canonical":
        dataset = read_canonical(ds_cfg.path)
    else:
        report = load_interactions(ds_cfg.path, ds_cfg.format, lastfm_field=ds_cfg.lastfm_field)
        dataset = build_dataset(
            report.records, min_count=ds_cfg.min_count, max_len=ds_cfg.max_len, collapse_repeats=ds_cfg.collapse_repeats
        )
    return Data(dataset, leave_one_out_split(dataset))


def build_model(cfg: ExperimentConfig, dataset: SequenceDataset) -> AdaSplit:
    return AdaSplit(ModelConfig(dataset.n_users, dataset.n_items, cfg.encoder, cfg.allocator), seed=cfg.seed)


@dataclass
class TrainOutcome:
    model: AdaSplit
    result: TrainResult
    test: MetricReport


def train_and_evaluate(cfg: ExperimentConfig, data: Data, run_dir: Path | None = None) -> TrainOutcome:
    """Train with per-epoch validation, then report test metrics of the best checkpoint."""
    model = build_model(cfg, data.dataset)
    log_path = timing_path = None
    if run_dir is not None:
        log_path, timing_path = run_dir / "train_log.jsonl", run_dir / "timing.jsonl"
    result = train(
        model, data.dataset, data.split, cfg.train, cfg.reward, log_path, timing_path, cfg.eval.select_metric
    )
    test = evaluate(model, data.dataset, data.split, "test", exclude_history=cfg.eval.exclude_history)
    if run_dir is not None:
        model.save(run_dir / "model.ckpt", {"best_epoch": result.best_epoch})
        (run_dir / "report.json").write_text(json.dumps(report_record(test, result), indent=2, sort_keys=True) + "\n")
    return TrainOutcome(model, result, test)


def report_record(test: MetricReport, result: TrainResult | None = None) -> dict:
    rec = {"test": test.as_dict()}
    if result is not None:
        rec.update(best_epoch=result.best_epoch, best_valid=result.best_valid, stopped_early=result.stopped_early)
    return rec


def with_value(cfg: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one nested field replaced (re-validated by the dataclass)."""
    section, name = dotted.split(".")
    new = copy.deepcopy(cfg)
    setattr(new, section, replace(getattr(new, section), **{name: value}))
    return new


def sweep(
    cfg: ExperimentConfig, data: Data, dotted: str, values: Iterable, seeds: Iterable[int] = (0,)
) -> list[dict]:
    """One row per value: test metrics averaged over ``seeds`` (model init and shuffle)."""
    rows = []
    for value in values:
        reports = []
        for seed in seeds:
            run_cfg = with_value(with_value(cfg, dotted, value), "train.seed", seed)
            run_cfg.seed = seed
            out = train_and_evaluate(run_cfg, data)
            reports.append(out.test)
            logger.info("%s=%s seed=%d  NDCG@5=%.3f", dotted, value, seed, out.test.ndcg5)
        row = {"variant": value}
        for key in ("ndcg5", "mrr5", "ndcg10", "mrr10", "mean_final_h"):
            row[key] = float(np.mean([getattr(r, key) for r in reports]))
        rows.append(row)
    return rows


def write_table(rows: list[dict], path: Path) -> None:
    cols = ["variant", "ndcg5", "mrr5", "ndcg10", "mrr10", "mean_final_h"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(str(r[c]) if c == "variant" else f"{r[c]:.4f}" for c in cols))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class SynthCheck:
    nmi: float
    mean_h: float
    mean_h_none: float
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def synth_check(cfg: ExperimentConfig, data: Data) -> SynthCheck:
    """Train the configured schedule and ``none``; compare NMI and final h on the test inputs."""
    if data.truth is None:
        raise ValueError("synth-check needs a synthetic dataset")
    main = train_and_evaluate(cfg, data)
    nmi, h, _ = disentanglement_report(main.model, data.dataset, data.truth)
    none_cfg = with_value(cfg, "reward.schedule", "none")
    none = train_and_evaluate(none_cfg, data)
    _, h_none, _ = disentanglement_report(none.model, data.dataset, data.truth)
    lo, hi = SYNTH_H_RANGE
    passed = {
        "nmi": nmi >= SYNTH_NMI_MIN,
        "h_range": lo <= h <= hi,
        "none_exceeds": h_none > h,
    }
    return SynthCheck(nmi, h, h_none, passed)


@no_grad()
def episode_traces(model: AdaSplit, split: Split, phase: str = "test") -> list[dict]:
    """Greedy allocation traces, one record per input step."""
    alloc = model.allocator
    records = []
    for user, items, _ in split.eval_samples(phase):
        items = list(items)[-model.max_len :]
        enc = model.encoder.encode(items, user)
        state = alloc.init_episode(enc.user, RewardConfig(schedule="none"))
        for t, item in enumerate(items):
            a, _, dist = alloc.step(state, ops.gather(enc.vectors, [t]), t, None, "argmax", None)
            records.append({"user": user, "step": t, "item": int(item), "action": a, "h": state.h,
                            "probs": [round(float(p), 8) for p in dist.values]})
    return records
