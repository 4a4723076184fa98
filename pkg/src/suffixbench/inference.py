"""Greedy suffix generation and remaining-time computation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .eventlog import EOS, MASK, NUM_SPECIAL, PAD, SOS, Event, MinMaxScaler
from .models import Architecture
from .training import TrainedModel

BLOCKED = (PAD, SOS, MASK)


@dataclass(frozen=True)
class GenerationConfig:
    max_len: int
    include_eos_time: bool = False
    full_recompute: bool = False
    pad_extra: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")


@dataclass
class SuffixPrediction:
    activities: list[int]
    durations: list[float]
    remaining_time_seconds: float
    forward_passes: int = 0


def remaining_time(activities: Sequence[int], durations: Sequence[float], scaler: MinMaxScaler, include_eos: bool = False) -> float:
    """Sum of inverse-scaled predicted durations in seconds, each clamped at 0."""
    total = 0.0
    for a, d in zip(activities, durations):
        if a == EOS and not include_eos:
            continue
        total += max(0.0, scaler.invert(max(0.0, d)))
    return total


def _pick(logits: np.ndarray) -> np.ndarray:
    logits = np.array(logits, dtype=np.float64)
    logits[..., list(BLOCKED)] = -np.inf
    return logits.argmax(axis=-1)


def _pad(acts: np.ndarray, times: np.ndarray, extra: int):
    if not extra:
        return acts, times
    b = acts.shape[0]
    return (
        np.concatenate([acts, np.full((b, extra), PAD, dtype=acts.dtype)], axis=1),
        np.concatenate([times, np.zeros((b, extra))], axis=1),
    )


def _validate(prefixes: Sequence[Sequence[Event]]) -> int:
    lengths = {len(p) for p in prefixes}
    if len(lengths) != 1:
        raise ValueError("prefixes in one generation batch must share a length")
    (k,) = lengths
    if k < 2:
        raise ValueError("prefix must contain at least 2 events")
    for p in prefixes:
        if any(e.activity < NUM_SPECIAL for e in p):
            raise ValueError("prefix contains a special symbol")
    return k


def generate_batch(
    trained: TrainedModel,
    prefixes: Sequence[Sequence[Event]],
    config: GenerationConfig,
    keys: Sequence[int] | None = None,
) -> list[SuffixPrediction]:
    """Greedy generation for equal-length prefixes in lockstep.

    ``keys`` seed BERT's per-prefix decoding order; rows never interact, so
    the result for a prefix does not depend on its batch companions.
    """
    k = _validate(prefixes)
    model = trained.model
    model.eval()
    acts = np.array([[e.activity for e in p] for p in prefixes], dtype=np.int64)
    times = np.array([[trained.scaler.apply(e.duration) for e in p] for p in prefixes], dtype=np.float64).reshape(acts.shape)
    keys = list(range(len(prefixes))) if keys is None else list(keys)
    if len(keys) != len(prefixes):
        raise ValueError(f"{len(keys)} keys for {len(prefixes)} prefixes")
    with dc.no_grad():
        if trained.config.architecture is Architecture.BERT:
            rows, passes = _generate_bert(model, acts, times, config, keys)
        else:
            rows, passes = _generate_ar(trained, acts, times, config)
    out = []
    for a_list, d_list in rows:
        seconds = remaining_time(a_list, d_list, trained.scaler, config.include_eos_time)
        out.append(SuffixPrediction(a_list, d_list, seconds, passes))
    return out


def generate_suffix(trained: TrainedModel, prefix: Sequence[Event], config: GenerationConfig, key: int = 0) -> SuffixPrediction:
    return generate_batch(trained, [prefix], config, [key])[0]


def _truncate(acts: np.ndarray, durs: np.ndarray) -> tuple[list[int], list[float]]:
    a_out, d_out = [], []
    for a, d in zip(acts, durs):
        a_out.append(int(a))
        d_out.append(float(max(0.0, d)))
        if a == EOS:
            break
    return a_out, d_out


def _generate_ar(trained: TrainedModel, acts: np.ndarray, times: np.ndarray, config: GenerationConfig):
    arch = trained.config.architecture
    model = trained.model
    b = acts.shape[0]
    emitted_a = np.zeros((b, config.max_len), dtype=np.int64)
    emitted_t = np.zeros((b, config.max_len))
    done = np.zeros(b, dtype=bool)
    passes = 0

    incremental = arch in (Architecture.LSTM, Architecture.AE, Architecture.AEGAN) and not config.full_recompute
    seq2seq = arch in (Architecture.AE, Architecture.AEGAN, Architecture.TRANSFORMER)
    if seq2seq:
        context = model.encode(*_pad(acts, times, config.pad_extra), np.full(b, acts.shape[1]))
        ctx_a = np.full((b, 1), SOS, dtype=np.int64)
        ctx_t = np.zeros((b, 1))
    else:
        ctx_a, ctx_t = acts, times
    if incremental and seq2seq:
        state = model.decode_start(context)
        logits, tm, state = model.decode_step(state, ctx_a[:, 0], ctx_t[:, 0])
    elif incremental:
        logits, tm, state = model.start(ctx_a, ctx_t)
        logits, tm = dc.getitem(logits, (slice(None), 0)), dc.getitem(tm, (slice(None), 0))

    for step in range(config.max_len):
        if not incremental:
            n_true = ctx_a.shape[1]
            pa, pt = _pad(ctx_a, ctx_t, config.pad_extra)
            lengths = np.full(b, n_true)
            if seq2seq:
                out = model.decode(context, pa, pt) if arch is not Architecture.TRANSFORMER else model.decode(context, pa, pt, lengths)
            elif arch is Architecture.LSTM or arch is Architecture.WAVENET:
                out = model.predict_sequence(pa, pt)
            else:
                out = model.predict_sequence(pa, pt, lengths)
            logits, tm = dc.getitem(out[0], (slice(None), n_true - 1)), dc.getitem(out[1], (slice(None), n_true - 1))
        passes += 1
        nxt = _pick(logits.data)
        nxt_t = np.maximum(tm.data.astype(np.float64), 0.0)
        emitted_a[:, step] = nxt
        emitted_t[:, step] = nxt_t
        done |= nxt == EOS
        if done.all() or step + 1 == config.max_len:
            break
        feed_t = np.where(nxt == EOS, 0.0, np.minimum(nxt_t, 1.0))
        if incremental:
            if seq2seq:
                logits, tm, state = model.decode_step(state, nxt, feed_t)
            else:
                logits, tm, state = model.step(nxt, feed_t, state)
        else:
            ctx_a = np.concatenate([ctx_a, nxt[:, None]], axis=1)
            ctx_t = np.concatenate([ctx_t, feed_t[:, None]], axis=1)
    rows = [_truncate(emitted_a[r], emitted_t[r]) for r in range(b)]
    return rows, passes


def _generate_bert(model, acts: np.ndarray, times: np.ndarray, config: GenerationConfig, keys):
    b, k = acts.shape
    slots = max(1, config.max_len - k)
    canvas_a = np.concatenate([acts, np.full((b, slots), MASK, dtype=np.int64)], axis=1)
    canvas_t = np.concatenate([times, np.zeros((b, slots))], axis=1)
    predicted_t = np.zeros((b, slots))
    orders = np.stack([
        np.random.default_rng(np.random.SeedSequence([config.seed, k, int(key)])).permutation(slots) for key in keys
    ])
    rows_idx = np.arange(b)
    n_true = k + slots
    for s in range(slots):
        pa, pt = _pad(canvas_a, canvas_t, config.pad_extra)
        logits, tm = model.predict_sequence(pa, pt, np.full(b, n_true))
        pos = k + orders[:, s]
        chosen = _pick(logits.data[rows_idx, pos])
        t_val = np.maximum(tm.data[rows_idx, pos].astype(np.float64), 0.0)
        canvas_a[rows_idx, pos] = chosen
        canvas_t[rows_idx, pos] = np.where(chosen == EOS, 0.0, np.minimum(t_val, 1.0))
        predicted_t[rows_idx, pos - k] = t_val
    rows = [_truncate(canvas_a[r, k:], predicted_t[r]) for r in range(b)]
    return rows, slots


def case_key(case_id: str) -> int:
    """Stable integer key for a case id (seeds per-prefix decoding order)."""
    return zlib.crc32(case_id.encode("utf-8"))
