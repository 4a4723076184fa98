"""
Suffix prediction on a process the models can memorize
======================================================

Three deterministic variants share their first activity; the second one
decides everything after it. A small GPT trained for a few dozen epochs
should reproduce every suffix and its remaining time.

Run: python demos/01_memorization.py
"""

import numpy as np

from suffixbench import eventlog as el
from suffixbench import evaluation as ev
from suffixbench import inference as inf
from suffixbench import synthetic, training
from suffixbench.models import ModelConfig

log = synthetic.sample_log(synthetic.memorization_spec(), 200, seed=0, name="memorization")
train_log, eval_log = el.split_train_eval(log, el.SplitSpec(seed=0))
scaler = el.fit_scaler(train_log.traces)
print(f"{len(log.traces)} traces, {len(log.vocabulary) - el.NUM_SPECIAL} activities, longest trace {log.max_length}")

# %%
# A narrower model than the default keeps this under a minute on a laptop.
config = ModelConfig("gpt", len(log.vocabulary), log.max_length, layers=2, d_z=64)
trained = training.fit(
    config,
    training.make_batches(config, train_log, scaler),
    training.make_batches(config, eval_log, scaler),
    log.vocabulary, scaler, log.max_length,
    training.TrainConfig(max_epochs=80, patience=20, lr=1e-3),
)
print(f"trained {trained.report.epochs_run} epochs, best eval loss {trained.report.best_eval_loss:.4f}")

# %%
# Greedy suffixes for a handful of prefixes.
names = log.vocabulary.names
gen = inf.GenerationConfig(max_len=log.max_length)
for trace in eval_log.traces[:4]:
    prefix = trace.events[:2]
    pred = inf.generate_suffix(trained, prefix, gen)
    truth = [names[e.activity] for e in trace.events[2:]]
    hours = pred.remaining_time_seconds / 3600
    true_hours = sum(e.duration for e in trace.events[2:]) / 3600
    print(f"{' '.join(names[e.activity] for e in prefix):>6} -> {' '.join(names[a] for a in pred.activities):<22}"
          f" truth {' '.join(truth):<22} remaining {hours:5.2f}h (true {true_hours:.2f}h)")

# %%
report, _ = ev.evaluate(trained, eval_log)
print(f"overall DLS {report.dls_mean:.3f}, MAE {report.mae_mean_days:.4f} days")
print(np.round([r.dls_mean for r in report.rows if r.n_samples], 3))
