"""Training layouts, one-hot encoding and padded batches.

Four input/target layouts are supported:

* ``NEXT_EVENT`` - prefix in, the single next event out (LSTM).
* ``PREFIX_TO_SHIFTED_SUFFIX`` - prefix to the encoder, ``[SOS]``-started
  suffix to the decoder, the suffix itself as target (AE, AE-GAN, Transformer).
* ``MASKED_RECONSTRUCTION`` - whole trace with a random subset replaced by
  ``[MASK]``; only masked positions are scored (BERT).
* ``FULL_SHIFTED`` - whole trace shifted by one (GPT, WaveNet).
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .eventlog import EOS, MASK, NUM_SPECIAL, PAD, SOS, Event, EventLog, MinMaxScaler, Trace


class TargetLayout(enum.Enum):
    NEXT_EVENT = 1
    PREFIX_TO_SHIFTED_SUFFIX = 2
    MASKED_RECONSTRUCTION = 3
    FULL_SHIFTED = 4


@dataclass(frozen=True)
class PrefixSample:
    case_id: str
    k: int
    prefix: tuple[Event, ...]
    suffix: tuple[Event, ...]


@dataclass
class Batch:
    layout: TargetLayout
    activity_inputs: np.ndarray
    time_inputs: np.ndarray
    activity_targets: np.ndarray
    time_targets: np.ndarray
    loss_mask: np.ndarray
    lengths: np.ndarray
    # decoder side of PREFIX_TO_SHIFTED_SUFFIX; targets and loss_mask align with it
    dec_activity_inputs: np.ndarray | None = None
    dec_time_inputs: np.ndarray | None = None
    dec_lengths: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.activity_inputs.shape[0]


def one_hot(index: int, vocab_size: int) -> np.ndarray:
    if not 0 <= index < vocab_size:
        raise IndexError(f"index {index} outside vocabulary of size {vocab_size}")
    vec = np.zeros(vocab_size)
    vec[index] = 1.0
    return vec


def make_prefix_suffix_pairs(log: EventLog) -> list[PrefixSample]:
    """All (prefix, suffix) pairs with 2 <= k < |trace|.

    Traces too short to yield a pair are counted in ``log.skipped['short_traces']``.
    """
    samples = []
    short = 0
    for trace in log.traces:
        if trace.events[-1].activity != EOS:
            raise ValueError(f"trace {trace.case_id} does not end with [EOS]")
        n = len(trace)
        if n < 3:
            short += 1
            continue
        for k in range(2, n):
            samples.append(PrefixSample(trace.case_id, k, trace.events[:k], trace.events[k:]))
    log.skipped["short_traces"] = short
    return samples


def _scaled(events: Sequence[Event], scaler: MinMaxScaler) -> np.ndarray:
    return np.array([0.0 if e.activity < NUM_SPECIAL else scaler.apply(e.duration) for e in events])


def _bucket(items: list, key, batch_size: int) -> list[list]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(items)), key=lambda i: key(items[i]))
    return [[items[i] for i in order[s : s + batch_size]] for s in range(0, len(order), batch_size)]


def _pad_rows(rows: list[tuple[list[int], np.ndarray]], width: int | None = None):
    width = width or max(len(a) for a, _ in rows)
    acts = np.full((len(rows), width), PAD, dtype=np.int64)
    times = np.zeros((len(rows), width))
    for r, (a, t) in enumerate(rows):
        acts[r, : len(a)] = a
        times[r, : len(a)] = t
    return acts, times


def pad_and_batch(
    samples: Sequence, layout: TargetLayout, batch_size: int, scaler: MinMaxScaler, canvas_len: int | None = None
) -> list[Batch]:
    """Right-pad length-bucketed samples into batches.

    ``samples`` are :class:`PrefixSample` for the first two layouts and
    :class:`Trace` for the other two. ``canvas_len`` (masked layout only)
    extends every trace with [EOS] filler to that length, so training rows
    have the same shape as the fixed-size generation canvas.
    """
    if layout is TargetLayout.NEXT_EVENT:
        groups = _bucket(list(samples), lambda s: s.k, batch_size)
        return [_next_event_batch(g, scaler) for g in groups]
    if layout is TargetLayout.PREFIX_TO_SHIFTED_SUFFIX:
        groups = _bucket(list(samples), lambda s: (s.k, len(s.suffix)), batch_size)
        return [_seq2seq_batch(g, scaler) for g in groups]
    groups = _bucket(list(samples), len, batch_size)
    if layout is TargetLayout.FULL_SHIFTED:
        return [_shifted_batch(g, scaler) for g in groups]
    return [_masked_source_batch(g, scaler, canvas_len) for g in groups]


def _next_event_batch(group: list[PrefixSample], scaler) -> Batch:
    acts, times = _pad_rows([([e.activity for e in s.prefix], _scaled(s.prefix, scaler)) for s in group])
    tgt_a = np.full_like(acts, PAD)
    tgt_t = np.zeros_like(times)
    mask = np.zeros_like(times)
    lengths = np.array([s.k for s in group])
    for r, s in enumerate(group):
        nxt = s.suffix[0]
        tgt_a[r, s.k - 1] = nxt.activity
        tgt_t[r, s.k - 1] = _scaled([nxt], scaler)[0]
        mask[r, s.k - 1] = 1.0
    return Batch(TargetLayout.NEXT_EVENT, acts, times, tgt_a, tgt_t, mask, lengths)


def _seq2seq_batch(group: list[PrefixSample], scaler) -> Batch:
    acts, times = _pad_rows([([e.activity for e in s.prefix], _scaled(s.prefix, scaler)) for s in group])
    dec_rows, tgt_rows = [], []
    for s in group:
        suffix_t = _scaled(s.suffix, scaler)
        dec_rows.append(([SOS] + [e.activity for e in s.suffix[:-1]], np.concatenate([[0.0], suffix_t[:-1]])))
        tgt_rows.append(([e.activity for e in s.suffix], suffix_t))
    dec_a, dec_t = _pad_rows(dec_rows)
    tgt_a, tgt_t = _pad_rows(tgt_rows)
    dec_lengths = np.array([len(s.suffix) for s in group])
    mask = (np.arange(tgt_a.shape[1])[None, :] < dec_lengths[:, None]).astype(float)
    return Batch(
        TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, acts, times, tgt_a, tgt_t, mask,
        np.array([s.k for s in group]), dec_a, dec_t, dec_lengths,
    )


def _shifted_batch(group: list[Trace], scaler) -> Batch:
    rows = [(t.activities, _scaled(t.events, scaler)) for t in group]
    acts, times = _pad_rows([(a[:-1], s[:-1]) for a, s in rows])
    tgt_a, tgt_t = _pad_rows([(a[1:], s[1:]) for a, s in rows], acts.shape[1])
    lengths = np.array([len(t) - 1 for t in group])
    mask = (np.arange(acts.shape[1])[None, :] < lengths[:, None]).astype(float)
    return Batch(TargetLayout.FULL_SHIFTED, acts, times, tgt_a, tgt_t, mask, lengths)


def _masked_source_batch(group: list[Trace], scaler, canvas_len: int | None = None) -> Batch:
    rows = [(t.activities, _scaled(t.events, scaler)) for t in group]
    if canvas_len is not None:
        if any(len(a) > canvas_len for a, _ in rows):
            raise ValueError(f"trace longer than canvas length {canvas_len}")
        rows = [(a + [EOS] * (canvas_len - len(a)), np.concatenate([t, np.zeros(canvas_len - len(a))])) for a, t in rows]
    acts, times = _pad_rows(rows)
    lengths = np.array([len(a) for a, _ in rows])
    return Batch(
        TargetLayout.MASKED_RECONSTRUCTION, acts.copy(), times.copy(), acts, times, np.zeros_like(times), lengths
    )


def make_full_shifted(log: EventLog, scaler: MinMaxScaler, batch_size: int = 64) -> list[Batch]:
    if not log.traces:
        raise ValueError("empty log")
    return pad_and_batch(log.traces, TargetLayout.FULL_SHIFTED, batch_size, scaler)


def apply_masking(batch: Batch, rng: np.random.Generator) -> Batch:
    """Corrupt each row: draw c ~ U{1..n_true}, replace c distinct positions by [MASK].

    Masked inputs get time 0; the loss mask marks exactly the masked positions.
    Targets keep the original events.
    """
    acts = batch.activity_targets.copy()
    times = batch.time_targets.copy()
    mask = np.zeros_like(times)
    for r, n_true in enumerate(batch.lengths):
        count = int(rng.integers(1, n_true + 1))
        positions = rng.choice(int(n_true), size=count, replace=False)
        acts[r, positions] = MASK
        times[r, positions] = 0.0
        mask[r, positions] = 1.0
    return replace(batch, activity_inputs=acts, time_inputs=times, loss_mask=mask)


def make_masked(
    log: EventLog, rng: np.random.Generator, scaler: MinMaxScaler, batch_size: int = 64, canvas_len: int | None = None
) -> list[Batch]:
    sources = pad_and_batch(log.traces, TargetLayout.MASKED_RECONSTRUCTION, batch_size, scaler, canvas_len)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(sources))]
    return [apply_masking(b, s) for b, s in zip(sources, streams)]


def build_batches(
    log: EventLog, layout: TargetLayout, scaler: MinMaxScaler, batch_size: int = 64, canvas_len: int | None = None
) -> list[Batch]:
    """Unmasked batches for ``layout``; masked-layout batches get corrupted per step by the trainer."""
    if layout in (TargetLayout.NEXT_EVENT, TargetLayout.PREFIX_TO_SHIFTED_SUFFIX):
        return pad_and_batch(make_prefix_suffix_pairs(log), layout, batch_size, scaler)
    return pad_and_batch(log.traces, layout, batch_size, scaler, canvas_len)


def extend_padding(batch: Batch, extra: int) -> Batch:
    """Append ``extra`` pad columns to every sequence matrix of ``batch``."""
    def grow(x, fill=0):
        if x is None:
            return None
        return np.concatenate([x, np.full((x.shape[0], extra), fill, dtype=x.dtype)], axis=1)

    return replace(
        batch,
        activity_inputs=grow(batch.activity_inputs, PAD),
        time_inputs=grow(batch.time_inputs),
        activity_targets=grow(batch.activity_targets, PAD),
        time_targets=grow(batch.time_targets),
        loss_mask=grow(batch.loss_mask),
        dec_activity_inputs=grow(batch.dec_activity_inputs, PAD),
        dec_time_inputs=grow(batch.dec_time_inputs),
    )


# --- batch cache -------------------------------------------------------------

_CACHE_MAGIC = b"SBBT"
_CACHE_VERSION = 1
_FIELDS = (
    "activity_inputs", "time_inputs", "activity_targets", "time_targets", "loss_mask", "lengths",
    "dec_activity_inputs", "dec_time_inputs", "dec_lengths",
)


def cache_key(log_hash: str, layout: TargetLayout, seed: int, batch_size: int) -> str:
    return f"{log_hash}:{layout.name}:{seed}:{batch_size}"


def save_batch_cache(path, batches: Sequence[Batch], key: str) -> None:
    head = json.dumps({"key": key, "count": len(batches)}, sort_keys=True).encode()
    parts = [_CACHE_MAGIC, struct.pack("<HI", _CACHE_VERSION, len(head)), head]
    for b in batches:
        parts.append(struct.pack("<B", b.layout.value))
        for name in _FIELDS:
            arr = getattr(b, name)
            if arr is None:
                parts.append(struct.pack("<B", 0))
                continue
            arr = np.ascontiguousarray(arr, dtype="<f4")
            parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_batch_cache(path, key: str) -> list[Batch] | None:
    """Return cached batches, or None when the file is missing or keyed differently."""
    path = Path(path)
    if not path.exists():
        return None
    blob = path.read_bytes()
    if blob[:4] != _CACHE_MAGIC:
        return None
    version, head_len = struct.unpack_from("<HI", blob, 4)
    head = json.loads(blob[10 : 10 + head_len])
    if version != _CACHE_VERSION or head["key"] != key:
        return None
    pos = 10 + head_len
    batches = []
    for _ in range(head["count"]):
        layout = TargetLayout(blob[pos])
        pos += 1
        values = {}
        for name in _FIELDS:
            ndim = blob[pos]
            pos += 1
            if ndim == 0:
                values[name] = None
                continue
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            integer = name in ("activity_inputs", "activity_targets", "lengths", "dec_activity_inputs", "dec_lengths")
            values[name] = arr.astype(np.int64) if integer else arr.astype(np.float64)
        batches.append(Batch(layout=layout, **values))
    return batches
