"""Suffix metrics and per-prefix-length reports."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .eventlog import EventLog
from .inference import GenerationConfig, case_key, generate_batch
from .training import TrainedModel

SECONDS_PER_DAY = 86400.0
CSV_COLUMNS = ("model", "dataset", "k", "n_samples", "dls_mean", "mae_mean_days")


def dl_distance(s1: Sequence, s2: Sequence) -> int:
    """Optimal-string-alignment Damerau-Levenshtein distance.

    Insertions, deletions, substitutions and adjacent transpositions each
    cost 1; no substring is edited more than once.

    >>> dl_distance("abc", "acb")
    1
    >>> dl_distance("ca", "abc")
    3
    """
    n, m = len(s1), len(s2)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if s1[i - 1] == s2[j - 1] else 1
            best = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + cost)
            if i > 1 and j > 1 and s1[i - 1] == s2[j - 2] and s1[i - 2] == s2[j - 1]:
                best = min(best, d[i - 2, j - 2] + 1)
            d[i, j] = best
    return int(d[n, m])


def dls(s1: Sequence, s2: Sequence) -> float:
    """Similarity ``1 - DL / max(len)``; two empty sequences score 1.0."""
    longest = max(len(s1), len(s2))
    if longest == 0:
        return 1.0
    return 1.0 - dl_distance(s1, s2) / longest


@dataclass
class PrefixRow:
    k: int
    n_samples: int
    dls_mean: float | None
    mae_mean_days: float | None


@dataclass
class PrefixReport:
    model: str
    dataset: str
    rows: list[PrefixRow]
    dls_mean: float
    mae_mean_days: float
    fingerprint: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return sum(r.n_samples for r in self.rows)


@dataclass
class PredictionRecord:
    case_id: str
    k: int
    predicted: list[str]
    predicted_remaining_seconds: float
    truth: list[str]
    truth_remaining_seconds: float

    @property
    def dls(self) -> float:
        return dls(self.predicted, self.truth)

    @property
    def abs_error_days(self) -> float:
        return abs(self.predicted_remaining_seconds - self.truth_remaining_seconds) / SECONDS_PER_DAY


def aggregate(records: Sequence[PredictionRecord], model: str, dataset: str, max_k: int, fingerprint=None) -> PrefixReport:
    """Group instances by prefix length; overall means run over all instances."""
    if not records:
        raise ValueError("no evaluation instances")
    by_k: dict[int, list[PredictionRecord]] = {}
    for r in records:
        by_k.setdefault(r.k, []).append(r)
    rows = []
    for k in range(2, max(max_k, max(by_k)) + 1):
        group = by_k.get(k, [])
        if group:
            rows.append(PrefixRow(
                k, len(group),
                float(np.mean([g.dls for g in group])),
                float(np.mean([g.abs_error_days for g in group])),
            ))
        else:
            rows.append(PrefixRow(k, 0, None, None))
    return PrefixReport(
        model, dataset, rows,
        float(np.mean([r.dls for r in records])),
        float(np.mean([r.abs_error_days for r in records])),
        dict(fingerprint or {}),
    )


def _generate_group(trained: TrainedModel, k: int, items, config: GenerationConfig, chunk: int):
    names = trained.vocabulary.names
    out = []
    for start in range(0, len(items), chunk):
        part = items[start : start + chunk]
        preds = generate_batch(trained, [t.events[:k] for t in part], config, [case_key(t.case_id) for t in part])
        for trace, pred in zip(part, preds):
            suffix = trace.events[k:]
            out.append(PredictionRecord(
                trace.case_id, k,
                [names[a] for a in pred.activities], pred.remaining_time_seconds,
                [names[e.activity] for e in suffix], float(sum(e.duration for e in suffix)),
            ))
    return out


def predict_all(
    trained: TrainedModel, eval_log: EventLog, config: GenerationConfig | None = None, jobs: int = 1, chunk: int = 256
) -> list[PredictionRecord]:
    """Generate a suffix for every (trace, k) with 2 <= k < |trace|."""
    if not eval_log.traces:
        raise ValueError("empty evaluation set")
    config = config or GenerationConfig(max_len=trained.max_len)
    groups: dict[int, list] = {}
    for trace in eval_log.traces:
        for k in range(2, len(trace)):
            groups.setdefault(k, []).append(trace)
    ks = sorted(groups)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_generate_group, [trained] * len(ks), ks, [groups[k] for k in ks], [config] * len(ks), [chunk] * len(ks)))
    else:
        parts = [_generate_group(trained, k, groups[k], config, chunk) for k in ks]
    order = {t.case_id: i for i, t in enumerate(eval_log.traces)}
    records = [r for part in parts for r in part]
    records.sort(key=lambda r: (order[r.case_id], r.k))
    return records


def evaluate(
    trained: TrainedModel,
    eval_log: EventLog,
    config: GenerationConfig | None = None,
    model_tag: str | None = None,
    dataset_tag: str | None = None,
    fingerprint: dict | None = None,
    jobs: int = 1,
) -> tuple[PrefixReport, list[PredictionRecord]]:
    records = predict_all(trained, eval_log, config, jobs)
    max_k = max(eval_log.max_length, trained.max_len) - 1
    report = aggregate(
        records,
        model_tag or trained.config.architecture.value,
        dataset_tag or eval_log.name,
        max_k,
        fingerprint,
    )
    return report, records


# --- files ------------------------------------------------------------------

def write_predictions(path, records: Sequence[PredictionRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "case_id": r.case_id,
                "k": r.k,
                "predicted": r.predicted,
                "predicted_remaining_seconds": r.predicted_remaining_seconds,
                "truth": r.truth,
                "truth_remaining_seconds": r.truth_remaining_seconds,
            }) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [PredictionRecord(**json.loads(line)) for line in fh if line.strip()]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def report_csv(report: PrefixReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([report.model, report.dataset, row.k, row.n_samples, _fmt(row.dls_mean), _fmt(row.mae_mean_days)])
    writer.writerow([report.model, report.dataset, "overall", report.n_samples, _fmt(report.dls_mean), _fmt(report.mae_mean_days)])
    return buf.getvalue()


def read_report_csv(path) -> PrefixReport:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    overall = next(r for r in rows if r["k"] == "overall")
    prefix_rows = [
        PrefixRow(int(r["k"]), int(r["n_samples"]),
                  float(r["dls_mean"]) if r["dls_mean"] else None,
                  float(r["mae_mean_days"]) if r["mae_mean_days"] else None)
        for r in rows if r["k"] != "overall"
    ]
    return PrefixReport(overall["model"], overall["dataset"], prefix_rows,
                        float(overall["dls_mean"]), float(overall["mae_mean_days"]))


def emit_report(report: PrefixReport, directory, charts: bool = True, stem: str = "report") -> list[Path]:
    """Write ``<stem>.csv`` and, optionally, DLS and MAE charts as SVG."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / f"{stem}.csv"]
    written[0].write_text(report_csv(report), encoding="utf-8")
    if charts:
        for metric, label in (("dls_mean", "DLS"), ("mae_mean_days", "MAE (days)")):
            path = directory / f"{stem}_{metric.split('_')[0]}.svg"
            path.write_text(prefix_chart_svg(report, metric, label), encoding="utf-8")
            written.append(path)
    return written


def prefix_chart_svg(report: PrefixReport, metric: str, label: str, width: int = 640, height: int = 360) -> str:
    """Metric line (left axis) over frequency bars (right axis) per prefix length.

    Each bar carries ``data-k`` and ``data-count``; its height is
    ``count / max(count) * plot_height``.
    """
    left, right, top, bottom = 56, 56, 24, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    rows = report.rows
    max_count = max((r.n_samples for r in rows), default=0) or 1
    values = [getattr(r, metric) for r in rows]
    finite = [v for v in values if v is not None]
    top_value = max(finite) if finite and metric != "dls_mean" else 1.0
    top_value = top_value or 1.0
    slot = plot_w / max(len(rows), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>{report.model} / {report.dataset}: {label} per prefix length</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<g class="bars" data-plot-height="{plot_h}">',
    ]
    points = []
    for i, (row, v) in enumerate(zip(rows, values)):
        bar_h = row.n_samples / max_count * plot_h
        x = left + i * slot
        parts.append(
            f'<rect class="bar" data-k="{row.k}" data-count="{row.n_samples}" x="{x + slot * 0.15:.2f}" '
            f'y="{top + plot_h - bar_h:.4f}" width="{slot * 0.7:.2f}" height="{bar_h:.4f}" fill="#c9d6e8"/>'
        )
        parts.append(f'<text x="{x + slot / 2:.2f}" y="{height - bottom + 16}" font-size="10" text-anchor="middle">{row.k}</text>')
        if v is not None:
            points.append(f"{x + slot / 2:.2f},{top + plot_h - v / top_value * plot_h:.4f}")
    parts.append("</g>")
    parts.append(f'<polyline class="metric" fill="none" stroke="#c0392b" stroke-width="2" points="{" ".join(points)}"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>')
    parts.append(f'<text x="{left - 8}" y="{top + 4}" font-size="10" text-anchor="end">{top_value:.3g}</text>')
    parts.append(f'<text x="{left + plot_w + 8}" y="{top + 4}" font-size="10">{max_count}</text>')
    parts.append(f'<text x="{left}" y="{top - 8}" font-size="12">{label} (line) and prefix frequency (bars)</text>')
    parts.append(f'<text x="{left + plot_w / 2}" y="{height - 6}" font-size="11" text-anchor="middle">prefix length k</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
