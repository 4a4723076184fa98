"""Event logs: parsing, relative durations, vocabulary, scaling and splitting."""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import math
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, EOS, SOS, MASK = 0, 1, 2, 3
SPECIAL_NAMES = ("[PAD]", "[EOS]", "[SOS]", "[MASK]")
NUM_SPECIAL = len(SPECIAL_NAMES)


class EventLogError(Exception):
    pass


class ParseError(EventLogError):
    pass


class SchemaError(EventLogError):
    pass


class EmptyLogError(EventLogError):
    pass


class Vocabulary:
    """Bijection between activity names and indices; 0..3 are the special symbols."""

    def __init__(self, activities: Iterable[str] = ()):
        self._names: list[str] = list(SPECIAL_NAMES)
        self._index: dict[str, int] = {n: i for i, n in enumerate(self._names)}
        for name in activities:
            if name in self._index:
                raise ValueError(f"duplicate or reserved activity name {name!r}")
            self._index[name] = len(self._names)
            self._names.append(name)

    @classmethod
    def from_observed(cls, names: Iterable[str]) -> "Vocabulary":
        return cls(sorted(set(names)))

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        return self._index[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    @property
    def activities(self) -> list[str]:
        return self._names[NUM_SPECIAL:]

    def to_text(self) -> str:
        return "".join(f"{n}\n" for n in self._names)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if tuple(lines[:NUM_SPECIAL]) != SPECIAL_NAMES:
            raise ValueError("vocabulary text does not start with the reserved symbols")
        return cls(lines[NUM_SPECIAL:])

    def fingerprint(self) -> str:
        return hashlib.sha1(self.to_text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Event:
    activity: int
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"negative duration {self.duration}")
        if self.activity < NUM_SPECIAL and self.duration != 0:
            raise ValueError("special-symbol events must have zero duration")


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]

    def __len__(self) -> int:
        return len(self.events)

    @property
    def activities(self) -> list[int]:
        return [e.activity for e in self.events]

    @property
    def durations(self) -> list[float]:
        return [e.duration for e in self.events]


@dataclass(frozen=True)
class MinMaxScaler:
    min_seconds: float
    max_seconds: float

    def __post_init__(self):
        if self.max_seconds < self.min_seconds:
            raise ValueError("max_seconds < min_seconds")

    @property
    def degenerate(self) -> bool:
        return self.max_seconds == self.min_seconds

    def apply(self, seconds):
        """Scale into [0, 1]; values outside the fitted range are clamped."""
        x = np.asarray(seconds, dtype=np.float64)
        if self.degenerate:
            out = np.zeros_like(x)
        else:
            out = np.clip((x - self.min_seconds) / (self.max_seconds - self.min_seconds), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def invert(self, scaled):
        x = np.asarray(scaled, dtype=np.float64)
        out = self.min_seconds + x * (self.max_seconds - self.min_seconds)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


@dataclass
class EventLog:
    traces: list[Trace]
    vocabulary: Vocabulary
    time_scaler: MinMaxScaler | None = None
    name: str = "log"
    skipped: dict = field(default_factory=dict)

    def __post_init__(self):
        size = len(self.vocabulary)
        for t in self.traces:
            for e in t.events:
                if not 0 <= e.activity < size:
                    raise ValueError(f"activity index {e.activity} outside vocabulary of size {size}")

    def __len__(self) -> int:
        return len(self.traces)

    @property
    def max_length(self) -> int:
        return max((len(t) for t in self.traces), default=0)

    def subset(self, case_ids: Sequence[str]) -> "EventLog":
        by_id = {t.case_id: t for t in self.traces}
        missing = [c for c in case_ids if c not in by_id]
        if missing:
            raise KeyError(f"case ids not in log: {missing[:5]}")
        return EventLog([by_id[c] for c in case_ids], self.vocabulary, self.time_scaler, self.name)


# --- timestamps and durations ----------------------------------------------------

def parse_timestamp(text: str) -> int:
    """ISO-8601 to whole epoch seconds (naive values are read as UTC)."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return math.floor(dt.timestamp())


def to_relative_durations(timestamps: Sequence[int]) -> list[int]:
    """Consecutive differences in seconds; the first event gets 0."""
    out = [0] * len(timestamps)
    for i in range(1, len(timestamps)):
        diff = int(timestamps[i]) - int(timestamps[i - 1])
        if diff < 0:
            raise AssertionError(f"timestamps decrease at position {i}: {timestamps[i - 1]} -> {timestamps[i]}")
        out[i] = diff
    return out


def build_log(cases: Sequence[tuple[str, Sequence[tuple[str, int]]]], name: str = "log") -> EventLog:
    """Turn ``(case_id, [(activity, epoch_seconds), ...])`` groups into a log.

    Events are sorted by timestamp with ties kept in input order, and an
    [EOS] event with zero duration is appended to every trace.
    """
    if not cases:
        raise EmptyLogError("event log contains no traces")
    vocab = Vocabulary.from_observed(a for _, events in cases for a, _ in events)
    traces = []
    for case_id, events in cases:
        ordered = sorted(events, key=lambda e: e[1])
        durations = to_relative_durations([ts for _, ts in ordered])
        evs = [Event(vocab.index(a), float(d)) for (a, _), d in zip(ordered, durations)]
        evs.append(Event(EOS, 0.0))
        traces.append(Trace(str(case_id), tuple(evs)))
    return EventLog(traces, vocab, name=name)


# --- parsers -----------------------------------------------------------------------

def parse_csv(
    path,
    case_col: str = "case_id",
    activity_col: str = "activity",
    timestamp_col: str = "timestamp",
) -> EventLog:
    path = Path(path)
    groups: dict[str, list[tuple[str, int]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyLogError(f"{path}: empty file")
        for col in (case_col, activity_col, timestamp_col):
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: unknown column {col!r}; header has {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                ts = parse_timestamp(row[timestamp_col])
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}: row {row_no}: malformed timestamp {row[timestamp_col]!r}") from exc
            groups.setdefault(row[case_col], []).append((row[activity_col], ts))
    if not groups:
        raise EmptyLogError(f"{path}: no event rows")
    return build_log(list(groups.items()), name=path.stem)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _byte_offset(raw: bytes, line: int, column: int) -> int:
    lines = raw.split(b"\n")
    return sum(len(x) + 1 for x in lines[: line - 1]) + column


def parse_xes(path) -> EventLog:
    """Read trace/event elements, keeping only concept:name and time:timestamp."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ParseError(f"{path}: malformed XML at byte offset {_byte_offset(raw, line, column)}: {exc}") from exc

    cases = []
    for t_no, trace in enumerate(el for el in root if _local(el.tag) == "trace"):
        case_id = f"trace_{t_no}"
        events = []
        for child in trace:
            tag = _local(child.tag)
            if tag == "string" and child.get("key") == "concept:name":
                case_id = child.get("value", case_id)
            elif tag == "event":
                attrs = {(_local(a.tag), a.get("key")): a.get("value") for a in child}
                activity = attrs.get(("string", "concept:name"))
                stamp = attrs.get(("date", "time:timestamp"))
                if activity is None:
                    raise SchemaError(f"{path}: trace {t_no} has an event without concept:name")
                if stamp is None:
                    raise SchemaError(f"{path}: trace {t_no} has an event without time:timestamp")
                try:
                    events.append((activity, parse_timestamp(stamp)))
                except ValueError as exc:
                    raise ParseError(f"{path}: trace {t_no}: malformed timestamp {stamp!r}") from exc
        if events:
            cases.append((case_id, events))
    if not cases:
        raise EmptyLogError(f"{path}: no traces with events")
    return build_log(cases, name=path.name.split(".")[0])


# --- scaling and splitting ---------------------------------------------------

def fit_scaler(traces: Sequence[Trace]) -> MinMaxScaler:
    """Fit on training traces only; [EOS] zeros take part in the fit."""
    values = [e.duration for t in traces for e in t.events]
    if not values:
        raise ValueError("cannot fit a scaler on an empty set of traces")
    return MinMaxScaler(float(min(values)), float(max(values)))


def split_train_eval(log: EventLog, spec: SplitSpec = SplitSpec()) -> tuple[EventLog, EventLog]:
    d = len(log.traces)
    if d < 2:
        raise ValueError(f"need at least 2 traces to split, got {d}")
    order = np.random.default_rng(spec.seed).permutation(d)
    n_train = int(math.floor(spec.train_fraction * d))
    if n_train == 0 or n_train == d:
        raise ValueError(f"split of {d} traces at {spec.train_fraction} leaves one side empty")
    train = [log.traces[i] for i in order[:n_train]]
    held = [log.traces[i] for i in order[n_train:]]
    return (
        EventLog(train, log.vocabulary, log.time_scaler, log.name),
        EventLog(held, log.vocabulary, log.time_scaler, log.name),
    )


def write_split_manifest(directory, train: EventLog, held: EventLog) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "train.ids").write_text("".join(f"{t.case_id}\n" for t in train.traces), encoding="utf-8")
    (directory / "eval.ids").write_text("".join(f"{t.case_id}\n" for t in held.traces), encoding="utf-8")


def read_split_manifest(directory) -> tuple[list[str], list[str]]:
    directory = Path(directory)
    train = (directory / "train.ids").read_text(encoding="utf-8").splitlines()
    held = (directory / "eval.ids").read_text(encoding="utf-8").splitlines()
    return train, held


def apply_split_manifest(log: EventLog, directory) -> tuple[EventLog, EventLog]:
    train_ids, eval_ids = read_split_manifest(directory)
    return log.subset(train_ids), log.subset(eval_ids)


# --- canonical binary log --------------------------------------------------

_LOG_MAGIC = b"SBLG"
_LOG_VERSION = 1


def dumps_log(log: EventLog) -> bytes:
    head = json.dumps({"name": log.name, "vocabulary": log.vocabulary.names}, separators=(",", ":")).encode()
    parts = [_LOG_MAGIC, struct.pack("<HI", _LOG_VERSION, len(head)), head, struct.pack("<I", len(log.traces))]
    for t in log.traces:
        cid = t.case_id.encode("utf-8")
        parts.append(struct.pack("<HI", len(cid), len(t.events)))
        parts.append(cid)
        parts.append(np.array(t.activities, dtype="<u4").tobytes())
        parts.append(np.array(t.durations, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_log(blob: bytes) -> EventLog:
    if blob[:4] != _LOG_MAGIC:
        raise ParseError("not a canonical log file (bad magic)")
    version, head_len = struct.unpack_from("<HI", blob, 4)
    if version != _LOG_VERSION:
        raise ParseError(f"unsupported canonical log version {version}")
    pos = 10
    head = json.loads(blob[pos : pos + head_len])
    pos += head_len
    names = head["vocabulary"]
    vocab = Vocabulary(names[NUM_SPECIAL:])
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    traces = []
    for _ in range(count):
        cid_len, n = struct.unpack_from("<HI", blob, pos)
        pos += 6
        cid = blob[pos : pos + cid_len].decode("utf-8")
        pos += cid_len
        acts = np.frombuffer(blob, dtype="<u4", count=n, offset=pos)
        pos += 4 * n
        durs = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        traces.append(Trace(cid, tuple(Event(int(a), float(d)) for a, d in zip(acts, durs))))
    return EventLog(traces, vocab, name=head["name"])


def save_log(path, log: EventLog) -> None:
    Path(path).write_bytes(dumps_log(log))


def load_log(path) -> EventLog:
    return loads_log(Path(path).read_bytes())


def content_hash(blob: bytes) -> str:
    """Git-style blob hash: sha1 over ``b"blob <len>\\0" + content``."""
    return hashlib.sha1(b"blob %d\x00" % len(blob) + blob).hexdigest()
