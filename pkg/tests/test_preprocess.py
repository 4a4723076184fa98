from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suffixbench import eventlog as el
from suffixbench import preprocess as pp
from suffixbench.eventlog import EOS, MASK, PAD, SOS, Event, Trace
from suffixbench.preprocess import TargetLayout

from .helpers import random_log


def _trace(case_id, acts, durs=None):
    durs = durs or [float(i) for i in range(len(acts))]
    events = [Event(a, 0.0 if i == 0 else d) for i, (a, d) in enumerate(zip(acts, durs))]
    return Trace(case_id, tuple(events) + (Event(EOS, 0.0),))


def _log(*traces):
    return el.EventLog(list(traces), el.Vocabulary(["A", "B", "C", "D"]), name="t")


SCALER = el.MinMaxScaler(0.0, 10.0)


def test_pair_counts():
    log = _log(_trace("a", [4, 5, 6, 7]), _trace("b", [4, 5]), _trace("c", [4]))
    samples = pp.make_prefix_suffix_pairs(log)
    ks = Counter(s.case_id for s in samples)
    assert ks["a"] == 3 and ks["b"] == 1 and ks["c"] == 0
    assert log.skipped["short_traces"] == 1
    assert all(2 <= s.k < len(s.prefix) + len(s.suffix) for s in samples)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reconstruction_and_count_law(seed):
    log = random_log(np.random.default_rng(seed), n_traces=15)
    samples = pp.make_prefix_suffix_pairs(log)
    by_id = {t.case_id: t for t in log.traces}
    for s in samples:
        assert s.prefix + s.suffix == by_id[s.case_id].events
        assert s.suffix[-1].activity == EOS
    per_k = Counter(s.k for s in samples)
    for k in range(2, log.max_length + 1):
        assert per_k.get(k, 0) == sum(1 for t in log.traces if len(t) > k)


def test_full_shifted_layout():
    (batch,) = pp.make_full_shifted(_log(_trace("a", [4, 5])), SCALER)
    assert batch.activity_inputs.tolist() == [[4, 5]]
    assert batch.activity_targets.tolist() == [[5, EOS]]
    (batch,) = pp.make_full_shifted(_log(_trace("a", [4, 5]), _trace("b", [6, 7])), SCALER)
    assert batch.activity_inputs.shape == (2, 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_full_shifted_identity(seed):
    log = random_log(np.random.default_rng(seed), n_traces=10)
    for b in pp.make_full_shifted(log, SCALER, batch_size=4):
        for r, n in enumerate(b.lengths):
            assert np.array_equal(b.activity_targets[r, : n - 1], b.activity_inputs[r, 1:n])
            assert np.all(b.activity_inputs[r, n:] == PAD) and np.all(b.loss_mask[r, n:] == 0)


def test_right_padding_lengths_3_and_5():
    log = _log(_trace("a", [4, 5]), _trace("b", [4, 5, 6, 7]))
    (batch,) = pp.pad_and_batch(log.traces, TargetLayout.MASKED_RECONSTRUCTION, 8, SCALER)
    assert batch.activity_targets.shape == (2, 5)
    assert batch.activity_targets[0].tolist() == [4, 5, EOS, PAD, PAD]
    (shifted,) = pp.pad_and_batch(log.traces, TargetLayout.FULL_SHIFTED, 8, SCALER)
    assert shifted.loss_mask.tolist() == [[1, 1, 0, 0], [1, 1, 1, 1]]


def test_equal_lengths_add_no_padding():
    log = _log(_trace("a", [4, 5, 6]), _trace("b", [5, 6, 7]))
    for layout in (TargetLayout.FULL_SHIFTED, TargetLayout.MASKED_RECONSTRUCTION):
        (b,) = pp.pad_and_batch(log.traces, layout, 8, SCALER)
        assert not (b.activity_inputs == PAD).any()
        assert not (b.activity_targets == PAD).any()


@pytest.mark.parametrize("layout", [TargetLayout.NEXT_EVENT, TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, TargetLayout.FULL_SHIFTED])
def test_loss_mask_recount(layout, rng):
    log = random_log(rng, n_traces=25)
    if layout is TargetLayout.FULL_SHIFTED:
        expected = sum(len(t) - 1 for t in log.traces)
        batches = pp.build_batches(log, layout, SCALER, 4)
    else:
        samples = pp.make_prefix_suffix_pairs(log)
        expected = len(samples) if layout is TargetLayout.NEXT_EVENT else sum(len(s.suffix) for s in samples)
        batches = pp.build_batches(log, layout, SCALER, 4)
    assert sum(b.loss_mask.sum() for b in batches) == expected
    for b in batches:
        assert np.all(b.activity_targets[b.loss_mask == 0] == PAD)


def test_seq2seq_layout_shapes():
    log = _log(_trace("a", [4, 5, 6, 7], [0, 2, 4, 6]))
    batches = pp.build_batches(log, TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, SCALER, 1)
    by_k = {int(b.lengths[0]): b for b in batches}
    b = by_k[2]
    assert b.activity_inputs.tolist() == [[4, 5]]  # no [SOS] on the prefix side
    assert b.dec_activity_inputs.tolist() == [[SOS, 6, 7]]
    assert b.activity_targets.tolist() == [[6, 7, EOS]]
    assert np.allclose(b.dec_time_inputs, [[0.0, 0.4, 0.6]])
    assert np.allclose(b.time_targets, [[0.4, 0.6, 0.0]])


def test_seq2seq_sides_padded_independently():
    log = _log(_trace("a", [4, 5, 6, 7, 4, 5]), _trace("b", [4, 5, 6]))
    samples = [s for s in pp.make_prefix_suffix_pairs(log) if s.k == 2]
    (b,) = pp.pad_and_batch(samples, TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, 8, SCALER)
    assert b.activity_inputs.shape == (2, 2)
    assert b.dec_activity_inputs.shape == (2, 5)
    assert b.loss_mask.sum(1).tolist() == sorted([5, 2])[::-1] or b.loss_mask.sum(1).tolist() == [2, 5]


def test_next_event_layout():
    log = _log(_trace("a", [4, 5, 6], [0, 3, 5]))
    batches = pp.build_batches(log, TargetLayout.NEXT_EVENT, SCALER, 1)
    by_k = {int(b.lengths[0]): b for b in batches}
    assert by_k[2].activity_targets.tolist() == [[PAD, 6]] and by_k[2].loss_mask.tolist() == [[0, 1]]
    assert by_k[3].activity_targets[0, 2] == EOS


def test_one_hot():
    assert pp.one_hot(2, 5).tolist() == [0, 0, 1, 0, 0]
    assert pp.one_hot(0, 3).tolist() == [1, 0, 0]
    for i in range(6):
        assert pp.one_hot(i, 6).sum() == 1
    with pytest.raises(IndexError):
        pp.one_hot(5, 5)


def _masked_source(lengths):
    traces = [_trace(f"c{i}", [4 + (j % 4) for j in range(n - 1)]) for i, n in enumerate(lengths)]
    return pp.pad_and_batch(traces, TargetLayout.MASKED_RECONSTRUCTION, 64, SCALER)[0]


def test_masking_degenerate_cases():
    src = _masked_source([1 + 1])  # one activity plus [EOS]
    src.lengths[:] = 1  # pretend a single true position
    for seed in range(20):
        b = pp.apply_masking(src, np.random.default_rng(seed))
        assert b.activity_inputs[0, 0] == MASK and b.loss_mask[0].tolist() == [1, 0]


def test_masking_contract(rng):
    src = _masked_source([3, 5, 4])
    b = pp.apply_masking(src, rng)
    assert np.array_equal((b.activity_inputs == MASK), b.loss_mask.astype(bool))
    assert np.all(b.time_inputs[b.loss_mask == 1] == 0.0)
    assert np.array_equal(b.activity_targets, src.activity_targets)
    for r, n in enumerate(b.lengths):
        assert b.loss_mask[r, n:].sum() == 0 and 1 <= b.loss_mask[r].sum() <= n


def test_full_corruption_possible():
    src = _masked_source([4])
    seen_full = False
    for seed in range(200):
        b = pp.apply_masking(src, np.random.default_rng(seed))
        if b.loss_mask.sum() == 4:
            seen_full = True
            assert b.loss_mask[0].tolist() == [1, 1, 1, 1]
    assert seen_full


def test_mask_count_is_uniform():
    src = _masked_source([5])
    rng = np.random.default_rng(2024)
    counts = Counter(int(pp.apply_masking(src, rng).loss_mask.sum()) for _ in range(10_000))
    observed = [counts[c] for c in range(1, 6)]
    assert sum(observed) == 10_000
    expected = 10_000 / 5
    chi2 = sum((o - expected) ** 2 / expected for o in observed)
    assert chi2 < 13.28  # 99th percentile of chi-square with 4 degrees of freedom


def test_make_masked_is_seed_deterministic(rng):
    log = random_log(rng, n_traces=9)
    a = pp.make_masked(log, np.random.default_rng(5), SCALER, 4)
    b = pp.make_masked(log, np.random.default_rng(5), SCALER, 4)
    assert all(np.array_equal(x.activity_inputs, y.activity_inputs) for x, y in zip(a, b))


def test_canvas_fill_extends_with_eos():
    log = _log(_trace("a", [4, 5]), _trace("b", [4, 5, 6, 7]))
    (b,) = pp.build_batches(log, TargetLayout.MASKED_RECONSTRUCTION, SCALER, 8, canvas_len=6)
    assert b.activity_targets.tolist()[0] == [4, 5, EOS, EOS, EOS, EOS]
    assert b.lengths.tolist() == [6, 6]
    with pytest.raises(ValueError):
        pp.build_batches(log, TargetLayout.MASKED_RECONSTRUCTION, SCALER, 8, canvas_len=3)


def test_times_scaled_and_specials_zero():
    log = _log(_trace("a", [4, 5, 6], [0, 5, 20]))
    (b,) = pp.build_batches(log, TargetLayout.FULL_SHIFTED, SCALER, 4)
    assert np.allclose(b.time_inputs, [[0.0, 0.5, 1.0]])  # 20 s clamps to 1
    assert b.time_targets[0, -1] == 0.0


def test_extend_padding_keeps_mask_sum(rng):
    log = random_log(rng)
    for layout in TargetLayout:
        for b in pp.build_batches(log, layout, SCALER, 4):
            wide = pp.extend_padding(b, 3)
            assert wide.activity_inputs.shape[1] == b.activity_inputs.shape[1] + 3
            assert wide.loss_mask.sum() == b.loss_mask.sum()
            assert np.all(wide.activity_inputs[:, -3:] == PAD)


def test_batch_cache_round_trip(tmp_path, rng):
    log = random_log(rng)
    batches = pp.build_batches(log, TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, SCALER, 4)
    key = pp.cache_key("abc", TargetLayout.PREFIX_TO_SHIFTED_SUFFIX, 0, 4)
    pp.save_batch_cache(tmp_path / "b.cache", batches, key)
    back = pp.load_batch_cache(tmp_path / "b.cache", key)
    assert len(back) == len(batches)
    for x, y in zip(batches, back):
        assert np.array_equal(x.activity_inputs, y.activity_inputs)
        assert np.allclose(x.time_targets, y.time_targets, atol=1e-7)
        assert np.array_equal(x.dec_lengths, y.dec_lengths)
    assert pp.load_batch_cache(tmp_path / "b.cache", "other") is None
    assert pp.load_batch_cache(tmp_path / "missing", key) is None
