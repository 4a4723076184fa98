from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suffixbench import eventlog as el
from suffixbench import inference as inf
from suffixbench import training as tr
from suffixbench.eventlog import EOS, NUM_SPECIAL, Event
from suffixbench.models import Architecture, build_model

from .helpers import random_log, tiny_config

MAX_LEN = 9


@pytest.fixture(scope="module")
def log():
    return random_log(np.random.default_rng(21), n_traces=10, n_acts=5, max_len=7)


def _trained(arch, log, seed=0):
    config = tiny_config(arch, len(log.vocabulary), log.max_length)
    model = build_model(config, seed)
    model.eval()
    return tr.TrainedModel(model, config, log.vocabulary, el.fit_scaler(log.traces), log.max_length)


def _prefixes(log, k):
    return [t.events[:k] for t in log.traces if len(t) > k]


@pytest.mark.parametrize("arch", list(Architecture))
def test_outputs_are_well_formed(arch, log):
    trained = _trained(arch, log)
    cfg = inf.GenerationConfig(max_len=MAX_LEN)
    for k in (2, 3):
        for pred in inf.generate_batch(trained, _prefixes(log, k), cfg):
            assert 1 <= len(pred.activities) <= MAX_LEN
            assert all(a == EOS or a >= NUM_SPECIAL for a in pred.activities)
            assert EOS not in pred.activities[:-1]
            assert len(pred.durations) == len(pred.activities)
            assert pred.remaining_time_seconds >= 0.0
            assert np.isclose(pred.remaining_time_seconds,
                              inf.remaining_time(pred.activities, pred.durations, trained.scaler))


@pytest.mark.parametrize("arch", [Architecture.LSTM, Architecture.AE, Architecture.AEGAN])
def test_incremental_matches_full_recompute(arch, log):
    trained = _trained(arch, log)
    prefixes = _prefixes(log, 3)
    fast = inf.generate_batch(trained, prefixes, inf.GenerationConfig(max_len=MAX_LEN))
    slow = inf.generate_batch(trained, prefixes, inf.GenerationConfig(max_len=MAX_LEN, full_recompute=True))
    for a, b in zip(fast, slow):
        assert a.activities == b.activities
        assert np.allclose(a.durations, b.durations, atol=1e-5)


@pytest.mark.parametrize("arch", list(Architecture))
def test_batch_companions_do_not_matter(arch, log):
    trained = _trained(arch, log)
    prefixes = _prefixes(log, 2)
    keys = list(range(len(prefixes)))
    cfg = inf.GenerationConfig(max_len=MAX_LEN)
    together = inf.generate_batch(trained, prefixes, cfg, keys)
    for i, p in enumerate(prefixes):
        alone = inf.generate_suffix(trained, p, cfg, key=keys[i])
        assert alone.activities == together[i].activities
        assert np.allclose(alone.durations, together[i].durations, atol=1e-5)


@pytest.mark.parametrize("arch", [Architecture.GPT, Architecture.TRANSFORMER, Architecture.BERT])
def test_extra_padding_changes_nothing(arch, log):
    trained = _trained(arch, log)
    prefixes = _prefixes(log, 3)
    base = inf.generate_batch(trained, prefixes, inf.GenerationConfig(max_len=MAX_LEN))
    padded = inf.generate_batch(trained, prefixes, inf.GenerationConfig(max_len=MAX_LEN, pad_extra=4))
    for a, b in zip(base, padded):
        assert a.activities == b.activities
        assert np.allclose(a.durations, b.durations, atol=1e-5)


def test_bert_decoding_is_reproducible(log):
    trained = _trained("bert", log)
    prefixes = _prefixes(log, 2)
    cfg = inf.GenerationConfig(max_len=MAX_LEN, seed=3)
    keys = [100 + i for i in range(len(prefixes))]
    a = inf.generate_batch(trained, prefixes, cfg, keys)
    b = inf.generate_batch(trained, prefixes, cfg, keys)
    assert [p.activities for p in a] == [p.activities for p in b]
    assert all(p.forward_passes == MAX_LEN - 2 for p in a)


def test_max_len_caps_generation(log):
    trained = _trained("gpt", log)
    for max_len in (2, 4):
        for pred in inf.generate_batch(trained, _prefixes(log, 2), inf.GenerationConfig(max_len=max_len)):
            assert len(pred.activities) <= max_len
    with pytest.raises(ValueError):
        inf.GenerationConfig(max_len=1)


def test_prefix_validation(log):
    trained = _trained("gpt", log)
    cfg = inf.GenerationConfig(max_len=MAX_LEN)
    t = log.traces[0].events
    with pytest.raises(ValueError):
        inf.generate_batch(trained, [t[:1]], cfg)
    with pytest.raises(ValueError):
        inf.generate_batch(trained, [t[:2], t[:3]], cfg)
    with pytest.raises(ValueError):
        inf.generate_batch(trained, [(t[0], Event(EOS, 0.0))], cfg)
    with pytest.raises(ValueError):
        inf.generate_batch(trained, [t[:2]], cfg, keys=[1, 2])


def test_remaining_time_rules():
    scaler = el.MinMaxScaler(0.0, 100.0)
    assert inf.remaining_time([5, 6, EOS], [0.1, 0.2, 0.5], scaler) == pytest.approx(30.0)
    assert inf.remaining_time([5, 6, EOS], [0.1, 0.2, 0.5], scaler, include_eos=True) == pytest.approx(80.0)
    assert inf.remaining_time([5], [-0.4], scaler) == 0.0
    assert inf.remaining_time([], [], scaler) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1.0, 2.0), max_size=8), st.floats(1.0, 1e6))
def test_remaining_time_nonnegative_and_monotone(durs, span):
    scaler = el.MinMaxScaler(0.0, span)
    acts = [5] * len(durs)
    total = inf.remaining_time(acts, durs, scaler)
    assert total >= 0.0
    assert inf.remaining_time(acts + [5], durs + [0.5], scaler) >= total


def test_case_key_is_stable():
    assert inf.case_key("case-1") == inf.case_key("case-1")
    assert inf.case_key("case-1") != inf.case_key("case-2")
