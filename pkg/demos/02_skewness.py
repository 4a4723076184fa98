"""
What averages hide: DLS per prefix length on a long-tailed log
==============================================================

Half the cases take a rework loop that repeats with probability 0.6, so
trace lengths have a geometric tail. The overall DLS is one number; the
per-prefix table shows how few samples sit behind each long prefix.

Run: python demos/02_skewness.py [output_dir]
"""

import sys

from suffixbench import eventlog as el
from suffixbench import evaluation as ev
from suffixbench import synthetic, training
from suffixbench.models import ModelConfig

out_dir = sys.argv[1] if len(sys.argv) > 1 else "skewness_report"

log = synthetic.sample_log(synthetic.skewed_spec(0.6), 500, seed=0, name="skewed")
train_log, eval_log = el.split_train_eval(log, el.SplitSpec(seed=0))
scaler = el.fit_scaler(train_log.traces)

config = ModelConfig("wavenet", len(log.vocabulary), log.max_length)
trained = training.fit(
    config,
    training.make_batches(config, train_log, scaler),
    training.make_batches(config, eval_log, scaler),
    log.vocabulary, scaler, log.max_length,
    training.TrainConfig(max_epochs=200, patience=30, lr=1e-3),
)
report, _ = ev.evaluate(trained, eval_log)

# %%
# Frequency bars next to the metric make the sample sizes visible.
top = max(r.n_samples for r in report.rows)
print(f"{'k':>3} {'n':>4} {'DLS':>6} {'MAE(d)':>7}")
for r in report.rows:
    if not r.n_samples:
        continue
    bar = "#" * max(1, round(30 * r.n_samples / top))
    print(f"{r.k:>3} {r.n_samples:>4} {r.dls_mean:>6.3f} {r.mae_mean_days:>7.3f}  {bar}")
print(f"overall DLS {report.dls_mean:.3f} over {report.n_samples} prefixes")

for path in ev.emit_report(report, out_dir):
    print("wrote", path)
