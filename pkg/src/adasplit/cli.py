"""Command-line entry points.

Exit codes: 0 success, 2 configuration or usage error, 3 data or checkpoint
error, 4 numeric failure during training, 5 an acceptance threshold not met.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .autodiff.checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config, make_run_dir
from .dataio import FORMATS, DataError, build_dataset, load_interactions, write_canonical
from .evaluation import evaluate
from .model import AdaSplit
from .trainer import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4, 5

logger = logging.getLogger("adasplit")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adasplit", description="Adaptive sub-sequence recommender experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="raw interaction log -> canonical dataset files")
    pre.add_argument("--input", required=True, type=Path)
    pre.add_argument("--format", required=True, choices=FORMATS)
    pre.add_argument("--out", required=True, type=Path, help="output directory")
    pre.add_argument("--min-count", type=int, default=5)
    pre.add_argument("--max-len", type=int, default=None, help="keep only the most recent items per user")
    pre.add_argument("--collapse-repeats", action="store_true")
    pre.add_argument("--lastfm-field", choices=("artist", "track"), default="artist")

    run = sub.add_parser("run", help="train / evaluate / ablate / synth-check / grid")
    run_sub = run.add_subparsers(dest="action", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML experiment config")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.epochs=5 (repeatable)")
        sp.add_argument("--output-dir", help="root for the timestamped run directory")
        sp.add_argument("--seed", type=int, help="model initialisation seed")
        return sp

    tr = common(run_sub.add_parser("train"))
    tr.add_argument("--trace", action="store_true", help="also export greedy episode traces for the test inputs")
    ev = common(run_sub.add_parser("evaluate"))
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--phase", choices=("valid", "test"), default="test")
    ev.add_argument("--exclude-history", action="store_true")
    ev.add_argument("--rank-dump", action="store_true", help="write per-user ranks")
    ev.add_argument("--trace", action="store_true")
    ab = common(run_sub.add_parser("ablate"))
    ab.add_argument("--variant", required=True, help="encoder | updater | schedule | length")
    ab.add_argument("--seeds", type=int, nargs="+", default=[0])
    common(run_sub.add_parser("synth-check"))
    gr = common(run_sub.add_parser("grid"))
    gr.add_argument("--param", required=True, help="epsilon | lr | batch_size | lambda_o | beta | b1")
    gr.add_argument("--seeds", type=int, nargs="+", default=[0])
    return p


def _resolve(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_preprocess(args) -> int:
    report = load_interactions(args.input, args.format, lastfm_field=args.lastfm_field)
    dataset = build_dataset(report.records, args.min_count, args.max_len, args.collapse_repeats)
    paths = write_canonical(dataset, args.out)
    stats = dataset.stats.as_dict()
    print(json.dumps({"stats": stats, "malformed_lines": report.malformed_lines,
                      "files": {k: str(v) for k, v in paths.items()}}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    from . import pipeline

    cfg = _resolve(args)
    if args.action == "ablate" and args.variant not in pipeline.ABLATIONS:
        raise ConfigError(f"unknown ablation variant {args.variant!r}; choose from {sorted(pipeline.ABLATIONS)}")
    if args.action == "grid" and args.param not in pipeline.GRIDS:
        raise ConfigError(f"unknown grid parameter {args.param!r}; choose from {sorted(pipeline.GRIDS)}")
    if args.action == "evaluate" and not args.checkpoint.exists():
        raise CheckpointError(f"checkpoint not found: {args.checkpoint}")
    data = pipeline.load_data(cfg)
    run_dir = make_run_dir(cfg, args.action)
    (run_dir / "dataset_stats.json").write_text(json.dumps(data.dataset.stats.as_dict(), sort_keys=True) + "\n")

    if args.action == "train":
        out = pipeline.train_and_evaluate(cfg, data, run_dir)
        if args.trace:
            _write_jsonl(run_dir / "traces.jsonl", pipeline.episode_traces(out.model, data.split))
        print(json.dumps(pipeline.report_record(out.test, out.result), sort_keys=True))
        print(f"run directory: {run_dir}", file=sys.stderr)
        return EXIT_OK

    if args.action == "evaluate":
        model, _ = AdaSplit.load(args.checkpoint)
        report, res = evaluate(model, data.dataset, data.split, args.phase, args.exclude_history, return_ranks=True)
        record = report.as_dict()
        (run_dir / "report.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        if args.rank_dump:
            _write_jsonl(run_dir / "ranks.jsonl", (
                {"user": u, "rank": r, "target_subseq": a, "final_h": h}
                for u, r, a, h in zip(res.users, res.ranks, res.target_subseq, res.final_h)
            ))
        if args.trace:
            _write_jsonl(run_dir / "traces.jsonl", pipeline.episode_traces(model, data.split, args.phase))
        print(json.dumps(record, sort_keys=True))
        return EXIT_OK

    if args.action in ("ablate", "grid"):
        table = pipeline.ABLATIONS[args.variant] if args.action == "ablate" else pipeline.GRIDS[args.param]
        name = args.variant if args.action == "ablate" else args.param
        rows = pipeline.sweep(cfg, data, table[0], table[1], args.seeds)
        pipeline.write_table(rows, run_dir / f"{args.action}_{name}.tsv")
        for r in rows:
            print(json.dumps(r, sort_keys=True))
        return EXIT_OK

    check = pipeline.synth_check(cfg, data)
    record = {"nmi": check.nmi, "mean_h": check.mean_h, "mean_h_none": check.mean_h_none, "passed": check.passed}
    (run_dir / "synth_check.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK if check.ok else EXIT_THRESHOLD


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "preprocess":
            return cmd_preprocess(args)
        return cmd_run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
