"""Interaction-log ingestion, filtering, leave-one-out splitting and the canonical on-disk format."""

from __future__ import annotations

import csv
import gzip
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

FORMATS = ("csv-uit", "amazon-ratings", "lastfm-log", "amazon-json")
MALFORMED_LIMIT = 0.01
CANONICAL_HEADER = "user\titem\ttimestamp"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class LoadReport:
    records: list[InteractionRecord]
    malformed_lines: list[int] = field(default_factory=list)
    total_lines: int = 0


@dataclass
class DatasetStats:
    users: int
    items: int
    interactions: int
    density: float  # percent

    def as_dict(self) -> dict:
        return {"users": self.users, "items": self.items, "interactions": self.interactions, "density": self.density}


@dataclass
class SequenceDataset:
    user_ids: list[str]  # dense user index -> raw id
    item_ids: list[str]  # dense item index -> raw id
    sequences: list[list[int]]  # per dense user, chronological dense item ids
    timestamps: list[list[int]]
    stats: DatasetStats

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


@dataclass
class UserSplit:
    user: int
    train_prefix: list[int]
    valid_target: int
    test_target: int

    @property
    def valid_input(self) -> list[int]:
        return self.train_prefix

    @property
    def test_input(self) -> list[int]:
        return self.train_prefix + [self.valid_target]


@dataclass
class Split:
    users: list[UserSplit]
    dropped_users: int = 0

    def training_samples(self) -> list[tuple[int, list[int], int]]:
        """Expand every train prefix (v1..vn) into [(u, v1..vj) -> v(j+1)] for j in 1..n-1."""
        out = []
        for us in self.users:
            seq = us.train_prefix
            for j in range(1, len(seq)):
                out.append((us.user, seq[:j], seq[j]))
        return out

    def eval_samples(self, phase: str) -> list[tuple[int, list[int], int]]:
        if phase == "valid":
            return [(us.user, us.valid_input, us.valid_target) for us in self.users if us.valid_input]
        if phase == "test":
            return [(us.user, us.test_input, us.test_target) for us in self.users]
        raise ValueError(f"unknown phase {phase!r}")


# -- ingestion ----------------------------------------------------------------


def _parse_time(raw: str) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return int(float(raw))
    except ValueError:
        pass
    return int(datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp())


def _is_header(fields: Sequence[str]) -> bool:
    lowered = [f.strip().lower() for f in fields]
    return any(k in lowered for k in ("user", "user_id", "userid", "user_id:token", "reviewerid"))


def load_interactions(
    path: str | Path,
    format: str = "csv-uit",
    lastfm_field: str = "artist",
) -> LoadReport:
    """Read a raw log into records (file order preserved).

    Formats: ``csv-uit`` (user,item[,timestamp]), ``amazon-ratings``
    (user,item,rating,timestamp), ``lastfm-log`` (tab-separated
    user, timestamp, artist-id, artist-name, track-id, track-name; item is the
    artist or track column per ``lastfm_field``), ``amazon-json`` (one review
    object per line with reviewerID/asin/unixReviewTime). A ``.gz`` suffix is
    decompressed transparently.

    Raises :class:`DataError` when more than 1% of lines are malformed.
    """
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    if lastfm_field not in ("artist", "track"):
        raise DataError(f"lastfm_field must be 'artist' or 'track', got {lastfm_field!r}")
    p = Path(path)
    try:
        if p.suffix == ".gz":
            with gzip.open(p, "rt", encoding="utf-8", errors="replace") as fh:
                text = fh.read()
        else:
            text = p.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc}") from exc

    records: list[InteractionRecord] = []
    bad: list[int] = []
    lines = text.splitlines()
    total = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if total == 0 and format != "amazon-json" and _is_header(_split(line, format)):
            continue
        total += 1
        try:
            rec = _parse_line(line, format, lastfm_field, order=len(records))
        except (ValueError, KeyError, IndexError, json.JSONDecodeError):
            bad.append(lineno)
            continue
        records.append(rec)

    if total == 0:
        logger.warning("%s: empty input", p)
    if bad:
        logger.warning("%s: %d malformed line(s) skipped", p, len(bad))
        if len(bad) > MALFORMED_LIMIT * total:
            shown = ", ".join(map(str, bad[:20]))
            raise DataError(f"{p}: {len(bad)}/{total} malformed lines (> 1%); first at lines {shown}")
    return LoadReport(records=records, malformed_lines=bad, total_lines=total)


def _split(line: str, format: str) -> list[str]:
    if format == "lastfm-log":
        return line.rstrip("\n").split("\t")
    return next(csv.reader([line]))


def _parse_line(line: str, format: str, lastfm_field: str, order: int) -> InteractionRecord:
    if format == "amazon-json":
        obj = json.loads(line)
        user, item = str(obj["reviewerID"]), str(obj["asin"])
        ts = int(obj["unixReviewTime"])
    else:
        fields = _split(line, format)
        if format == "csv-uit":
            if len(fields) not in (2, 3):
                raise ValueError("expected 2 or 3 fields")
            user, item = fields[0], fields[1]
            ts = _parse_time(fields[2]) if len(fields) == 3 else order
        elif format == "amazon-ratings":
            if len(fields) != 4:
                raise ValueError("expected 4 fields")
            user, item = fields[0], fields[1]
            float(fields[2])  # rating must parse even though it is discarded
            ts = _parse_time(fields[3])
        else:
            if len(fields) < 6:
                raise ValueError("expected 6 tab-separated fields")
            user = fields[0]
            ts = _parse_time(fields[1])
            # fall back to the name column when the MusicBrainz id is blank
            if lastfm_field == "artist":
                item = fields[2] or fields[3]
            else:
                item = fields[4] or fields[5]
    user, item = user.strip(), item.strip()
    if not user or not item:
        raise ValueError("empty id")
    return InteractionRecord(user, item, ts)


# -- dataset construction -----------------------------------------------------


def compute_stats(sequences: Sequence[Sequence[int]], n_items: int | None = None) -> DatasetStats:
    users = len(sequences)
    items = n_items if n_items is not None else len({i for s in sequences for i in s})
    inter = sum(len(s) for s in sequences)
    density = 100.0 * inter / (users * items) if users and items else 0.0
    return DatasetStats(users, items, inter, density)


def build_dataset(
    records: Iterable[InteractionRecord],
    min_count: int = 5,
    max_len: int | None = None,
    collapse_repeats: bool = False,
) -> SequenceDataset:
    """Filter, order and densify records.

    Items with fewer than ``min_count`` interactions are dropped first, then
    users with fewer than ``min_count`` remaining interactions (one pass).
    Ties in timestamp keep file order. ``max_len`` keeps each user's most recent
    items; ``None`` keeps everything. Dense ids follow first appearance in the
    filtered, time-ordered log.
    """
    if min_count < 1:
        raise DataError("min_count must be >= 1")
    if max_len is not None and max_len < 3:
        raise DataError("max_len must be >= 3")
    records = list(records)
    item_counts = Counter(r.item_id for r in records)
    kept = [r for r in records if item_counts[r.item_id] >= min_count]
    user_counts = Counter(r.user_id for r in kept)
    kept = [r for r in kept if user_counts[r.user_id] >= min_count]

    per_user: dict[str, list[tuple[int, int, str]]] = {}
    for order, r in enumerate(kept):
        per_user.setdefault(r.user_id, []).append((r.timestamp, order, r.item_id))
    if len(per_user) < 2:
        raise DataError(f"only {len(per_user)} user(s) survive filtering with min_count={min_count}")

    user_order = sorted(per_user, key=lambda u: min(o for _, o, _ in per_user[u]))
    item_index: dict[str, int] = {}
    user_ids, sequences, stamps = [], [], []
    for u in user_order:
        events = sorted(per_user[u])
        if collapse_repeats:
            events = [e for k, e in enumerate(events) if k == 0 or e[2] != events[k - 1][2]]
        if max_len is not None:
            events = events[-max_len:]
        seq = []
        for _, _, item in events:
            if item not in item_index:
                item_index[item] = len(item_index)
            seq.append(item_index[item])
        user_ids.append(u)
        sequences.append(seq)
        stamps.append([t for t, _, _ in events])
    item_ids = [None] * len(item_index)
    for raw, idx in item_index.items():
        item_ids[idx] = raw
    return SequenceDataset(user_ids, item_ids, sequences, stamps, compute_stats(sequences, len(item_ids)))


def leave_one_out_split(dataset: SequenceDataset) -> Split:
    """Last item -> test, second-to-last -> validation, the rest trains."""
    users, dropped = [], 0
    for u, seq in enumerate(dataset.sequences):
        if len(seq) < 3:
            dropped += 1
            continue
        users.append(UserSplit(u, list(seq[:-2]), seq[-2], seq[-1]))
    if dropped:
        logger.warning("leave-one-out: dropped %d user(s) with fewer than 3 interactions", dropped)
    return Split(users, dropped)


# -- canonical files ----------------------------------------------------------


def write_canonical(dataset: SequenceDataset, out_dir: str | Path, stem: str = "dataset") -> dict[str, Path]:
    """Write ``<stem>.tsv`` (dense triples), ``<stem>.idmap.json`` and ``<stem>.split.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"{stem}.tsv"
    lines = [CANONICAL_HEADER]
    for u, (seq, ts) in enumerate(zip(dataset.sequences, dataset.timestamps)):
        lines.extend(f"{u}\t{i}\t{t}" for i, t in zip(seq, ts))
    data_path.write_text("\n".join(lines) + "\n")
    map_path = out / f"{stem}.idmap.json"
    map_path.write_text(
        json.dumps({"users": dataset.user_ids, "items": dataset.item_ids, "stats": dataset.stats.as_dict()}, indent=1)
        + "\n"
    )
    split = leave_one_out_split(dataset)
    split_path = out / f"{stem}.split.tsv"
    rows = ["user\tvalid_target\ttest_target\ttrain_length"]
    rows.extend(f"{s.user}\t{s.valid_target}\t{s.test_target}\t{len(s.train_prefix)}" for s in split.users)
    split_path.write_text("\n".join(rows) + "\n")
    return {"data": data_path, "idmap": map_path, "split": split_path}


def read_canonical(path: str | Path) -> SequenceDataset:
    """Load a dataset written by :func:`write_canonical` (no re-filtering)."""
    data_path = Path(path)
    if data_path.is_dir():
        data_path = data_path / "dataset.tsv"
    map_path = data_path.with_name(data_path.name[: -len(".tsv")] + ".idmap.json")
    if not data_path.exists() or not map_path.exists():
        raise DataError(f"canonical dataset not found at {data_path} (+ {map_path.name})")
    idmap = json.loads(map_path.read_text())
    n_users = len(idmap["users"])
    sequences: list[list[int]] = [[] for _ in range(n_users)]
    stamps: list[list[int]] = [[] for _ in range(n_users)]
    with data_path.open() as fh:
        header = fh.readline().rstrip("\n")
        if header != CANONICAL_HEADER:
            raise DataError(f"{data_path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            u, i, t = line.rstrip("\n").split("\t")
            sequences[int(u)].append(int(i))
            stamps[int(u)].append(int(t))
    return SequenceDataset(
        list(idmap["users"]), list(idmap["items"]), sequences, stamps, compute_stats(sequences, len(idmap["items"]))
    )
