"""Command-line entry point: ingest, train, evaluate, report, synthesize.

Exit codes: 0 success, 1 empty or missing data, 2 usage, 3 integrity mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .eventlog import (
    EOS,
    EmptyLogError,
    EventLog,
    EventLogError,
    SplitSpec,
    apply_split_manifest,
    content_hash,
    dumps_log,
    fit_scaler,
    loads_log,
    parse_csv,
    parse_xes,
    split_train_eval,
    write_split_manifest,
)
from .evaluation import CSV_COLUMNS, emit_report, evaluate, write_predictions
from .inference import GenerationConfig
from .kvfile import format_kv, read_kv
from .models import AdversarialConfig, Architecture, ModelConfig
from .synthetic import memorization_spec, read_spec, sample_cases, skewed_spec, write_csv
from .training import TrainConfig, TrainedModel, fit, make_batches

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3
LOG_FILE, VOCAB_FILE, HIST_FILE = "log.sblg", "vocabulary.txt", "histograms.json"
CHECKPOINT_FILE, CONFIG_FILE, REPORT_FILE = "model.sbck", "run_config.txt", "train_report.json"

logger = logging.getLogger("suffixbench")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code

    def __reduce__(self):
        return CliError, (str(self), self.code)


@dataclass
class RunConfig:
    """Every knob of one training run; written next to every output."""

    dataset: str = ""
    log_hash: str = ""
    arch: str = "gpt"
    seed: int = 0
    layers: int = 4
    d_z: int = 128
    heads: int = 4
    filter_size: int = 2
    dropout: float = 0.3
    max_epochs: int = 400
    patience: int = 50
    lr: float = 1e-4
    w_act: float = 1.0
    w_time: float = 1.0
    batch_size: int = 64
    clip_norm: float = 5.0
    train_fraction: float = 0.8
    bert_canvas_fill: bool = True
    tau_start: float = 1.0
    tau_end: float = 0.1
    open_loop_p: float = 0.9
    adv_weight: float = 0.1
    include_eos_time: bool = False

    def to_kv(self) -> str:
        return format_kv(asdict(self))

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "RunConfig":
        out = cls()
        for key, value in values.items():
            _set_field(out, key, value)
        return out

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.max_epochs, self.patience, self.lr, self.w_act, self.w_time, self.batch_size, self.seed, self.clip_norm)

    def model_config(self, vocab_size: int, max_len: int) -> ModelConfig:
        return ModelConfig(Architecture.parse(self.arch), vocab_size, max_len, self.layers, self.d_z, self.heads, self.filter_size, self.dropout)

    def adversarial(self) -> AdversarialConfig:
        return AdversarialConfig(self.tau_start, self.tau_end, 0.5, self.open_loop_p, self.adv_weight)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _set_field(cfg: RunConfig, key: str, value) -> None:
    key = key.replace("-", "_")
    if key not in _FIELD_TYPES:
        raise CliError(f"unknown config key {key!r}", EXIT_USAGE)
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool" and isinstance(value, str):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            value = value.lower() in ("true", "1", "yes")
        elif kind == "int":
            value = int(value)
        elif kind == "float":
            value = float(value)
    except ValueError:
        raise CliError(f"bad value {value!r} for {key}", EXIT_USAGE) from None
    setattr(cfg, key, value)


# --- ingest --------------------------------------------------------------------

def histograms(log: EventLog) -> dict:
    """Trace-length and activity frequencies ([EOS] excluded) plus padding cost."""
    lengths = Counter(len(t) - 1 for t in log.traces)
    acts = Counter(log.vocabulary.name(e.activity) for t in log.traces for e in t.events if e.activity != EOS)
    real = sum(len(t) for t in log.traces)
    padded = len(log.traces) * log.max_length
    return {
        "traces": len(log.traces),
        "events": sum(acts.values()),
        "trace_length": {str(k): lengths[k] for k in sorted(lengths)},
        "activity": {k: acts[k] for k in sorted(acts)},
        "padding": {
            "max_length": log.max_length,
            "real_tokens": real,
            "padded_tokens": padded,
            "pad_fraction": (padded - real) / padded if padded else 0.0,
        },
    }


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise CliError(f"input not found: {src}", EXIT_DATA)
    try:
        if args.format == "csv":
            log = parse_csv(src, args.case_col, args.activity_col, args.timestamp_col)
        else:
            log = parse_xes(src)
    except EventLogError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    if args.name:
        log.name = args.name
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blob = dumps_log(log)
    (out / LOG_FILE).write_bytes(blob)
    (out / VOCAB_FILE).write_text(log.vocabulary.to_text(), encoding="utf-8")
    hist = histograms(log)
    hist["log_hash"] = content_hash(blob)
    hist["source"] = str(src)
    (out / HIST_FILE).write_text(json.dumps(hist, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"ingested {hist['traces']} traces, {hist['events']} events, {len(log.vocabulary) - 4} activities -> {out}")
    return EXIT_OK


def _load_canonical(path) -> tuple[EventLog, str]:
    path = Path(path)
    if path.is_dir():
        path = path / LOG_FILE
    if not path.exists():
        raise CliError(f"canonical log not found: {path}", EXIT_DATA)
    blob = path.read_bytes()
    try:
        log = loads_log(blob)
    except EventLogError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INTEGRITY) from exc
    if not log.traces:
        raise CliError(f"{path}: log has no traces", EXIT_DATA)
    return log, content_hash(blob)


# --- train ---------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig()
    file_values = read_kv(args.config) if args.config else {}
    for key, value in file_values.items():
        _set_field(cfg, key, value)
    if args.seed is None and "seed" not in file_values and os.environ.get("SUFFIXBENCH_SEED"):
        _set_field(cfg, "seed", os.environ["SUFFIXBENCH_SEED"])
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name not in ("arch",):
            setattr(cfg, f.name, value)
    return cfg


def _train_one(cfg: RunConfig, log_path: str, out_root: str, manifest: str | None, force: bool) -> str:
    log, log_hash = _load_canonical(log_path)
    cfg.dataset, cfg.log_hash = log.name, log_hash
    run_dir = Path(out_root) / f"{log.name}-{Architecture.parse(cfg.arch).value}-{cfg.seed}"
    if run_dir.exists():
        if not force:
            raise CliError(f"run directory {run_dir} exists; pass --force to overwrite", EXIT_USAGE)
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    try:
        if manifest:
            train_log, eval_log = apply_split_manifest(log, manifest)
        else:
            train_log, eval_log = split_train_eval(log, SplitSpec(cfg.train_fraction, cfg.seed))
    except (KeyError, ValueError, FileNotFoundError) as exc:
        raise CliError(f"cannot split log: {exc}", EXIT_DATA) from exc
    write_split_manifest(run_dir, train_log, eval_log)
    (run_dir / CONFIG_FILE).write_text(cfg.to_kv(), encoding="utf-8")

    scaler = fit_scaler(train_log.traces)
    max_len = log.max_length
    model_config = cfg.model_config(len(log.vocabulary), max_len)
    train_batches = make_batches(model_config, train_log, scaler, cfg.batch_size, cfg.bert_canvas_fill)
    eval_batches = make_batches(model_config, eval_log, scaler, cfg.batch_size, cfg.bert_canvas_fill)
    if not train_batches or not eval_batches:
        raise CliError("split leaves no trainable samples", EXIT_DATA)
    trained = fit(
        model_config, train_batches, eval_batches, log.vocabulary, scaler, max_len,
        cfg.train_config(), cfg.adversarial(), run_dir / "train_log.jsonl",
    )
    trained.save(run_dir / CHECKPOINT_FILE)
    report = trained.report
    summary = {
        "run_config": asdict(cfg),
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_eval_loss": report.best_eval_loss,
        "stopped_early": report.stopped_early,
        "wall_clock_seconds": report.wall_clock,
        "open_loop_fraction": report.open_loop_fraction,
    }
    (run_dir / REPORT_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return f"{run_dir}: {report.epochs_run} epochs, best eval loss {report.best_eval_loss:.6f} at epoch {report.best_epoch}"


def cmd_train(args) -> int:
    base = _run_config(args)
    archs = [a.value for a in Architecture] if args.arch == "all" else [Architecture.parse(args.arch).value]
    jobs = []
    for arch in archs:
        cfg = RunConfig(**asdict(base))
        cfg.arch = arch
        jobs.append(cfg)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_train_one, cfg, args.log, args.out, args.split_manifest, args.force) for cfg in jobs]
            lines = [f.result() for f in futures]
    else:
        lines = [_train_one(cfg, args.log, args.out, args.split_manifest, args.force) for cfg in jobs]
    for line in lines:
        print(line)
    return EXIT_OK


# --- evaluate ------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / CHECKPOINT_FILE
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}", EXIT_DATA)
    run_dir = ckpt.parent
    log, log_hash = _load_canonical(args.log)
    try:
        trained = TrainedModel.load(ckpt)
    except Exception as exc:
        raise CliError(f"cannot read checkpoint {ckpt}: {exc}", EXIT_INTEGRITY) from exc
    want, have = trained.vocabulary.fingerprint(), log.vocabulary.fingerprint()
    if want != have:
        raise CliError(f"vocabulary mismatch: checkpoint {want} vs log {have}", EXIT_INTEGRITY)
    cfg = RunConfig.from_kv(read_kv(run_dir / CONFIG_FILE)) if (run_dir / CONFIG_FILE).exists() else RunConfig()
    if args.include_eos_time:
        cfg.include_eos_time = True
    manifest = Path(args.split_manifest) if args.split_manifest else run_dir
    try:
        _, eval_log = apply_split_manifest(log, manifest)
    except FileNotFoundError as exc:
        raise CliError(f"no split manifest in {manifest}", EXIT_DATA) from exc
    except KeyError as exc:
        raise CliError(f"split manifest does not match the log: {exc}", EXIT_INTEGRITY) from exc
    if not eval_log.traces:
        raise CliError("evaluation split is empty", EXIT_DATA)

    gen = GenerationConfig(max_len=trained.max_len, include_eos_time=cfg.include_eos_time, seed=cfg.seed)
    fingerprint = {
        "w_act": cfg.w_act, "w_time": cfg.w_time, "seed": cfg.seed,
        "split_hash": content_hash((manifest / "eval.ids").read_bytes()),
    }
    report, records = evaluate(trained, eval_log, gen, cfg.arch, cfg.dataset or log.name, fingerprint, args.jobs)
    out = Path(args.out) if args.out else run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.jsonl", records)
    emit_report(report, out, charts=not args.no_charts)
    meta = {
        "run_config": asdict(cfg),
        "log_hash": log_hash,
        "trained_on_log_hash": cfg.log_hash,
        "checkpoint": str(ckpt),
        "fingerprint": fingerprint,
        "dls_includes_eos": True,
        "remaining_time_includes_eos": cfg.include_eos_time,
        "mae_unit": "days",
        "suffixbench_version": __version__,
    }
    (out / "report.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{report.model}/{report.dataset}: DLS {report.dls_mean:.4f}, MAE {report.mae_mean_days:.4f} days over {report.n_samples} prefixes -> {out}")
    return EXIT_OK


# --- report --------------------------------------------------------------------

def combine_reports(paths) -> list[dict]:
    """Concatenate report CSVs and tag best/worst overall DLS and MAE per dataset."""
    rows = []
    for path in paths:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                row["source"] = str(Path(path).parent)
                rows.append(row)
    overall = [r for r in rows if r["k"] == "overall"]
    for dataset in sorted({r["dataset"] for r in overall}):
        group = [r for r in overall if r["dataset"] == dataset]
        dls_vals = [float(r["dls_mean"]) for r in group]
        mae_vals = [float(r["mae_mean_days"]) for r in group]
        for r, d, m in zip(group, dls_vals, mae_vals):
            r["dls_tag"] = ";".join(t for t, hit in (("best", d == max(dls_vals)), ("worst", d == min(dls_vals))) if hit)
            r["mae_tag"] = ";".join(t for t, hit in (("best", m == min(mae_vals)), ("worst", m == max(mae_vals))) if hit)
    for r in rows:
        r.setdefault("dls_tag", "")
        r.setdefault("mae_tag", "")
    return rows


def cmd_report(args) -> int:
    root = Path(args.runs)
    paths = sorted(root.rglob("report.csv")) if root.exists() else []
    if not paths:
        raise CliError(f"no report.csv found under {root}", EXIT_DATA)
    rows = combine_reports(paths)
    out = Path(args.out) if args.out else root / "combined.csv"
    columns = list(CSV_COLUMNS) + ["dls_tag", "mae_tag", "source"]
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"{'dataset':<16} {'model':<12} {'DLS':>8} {'MAE(d)':>9}  tags")
    for r in rows:
        if r["k"] == "overall":
            tags = ", ".join(f"{tag} {m}" for m, tag in (("DLS", r["dls_tag"]), ("MAE", r["mae_tag"])) if tag)
            print(f"{r['dataset']:<16} {r['model']:<12} {float(r['dls_mean']):>8.4f} {float(r['mae_mean_days']):>9.4f}  {tags}")
    print(f"combined {len(paths)} reports ({len(rows)} rows) -> {out}")
    return EXIT_OK


# --- synthesize ----------------------------------------------------------------

def cmd_synthesize(args) -> int:
    if args.spec:
        try:
            spec = read_spec(args.spec)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"bad spec file {args.spec}: {exc}", EXIT_USAGE) from exc
    else:
        spec = memorization_spec() if args.preset == "memorization" else skewed_spec(args.loop_p)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, sample_cases(spec, args.n_traces, args.seed))
    print(f"wrote {args.n_traces} traces -> {out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suffixbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a CSV or XES log into the canonical format")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=("csv", "xes"))
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="dataset tag (default: input file stem)")
    p.add_argument("--case-col", default="case_id")
    p.add_argument("--activity-col", default="activity")
    p.add_argument("--timestamp-col", default="timestamp")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="split, train and checkpoint one or all architectures")
    p.add_argument("--log", required=True, help="ingest output directory or canonical log file")
    p.add_argument("--arch", required=True, choices=[a.value for a in Architecture] + ["all"])
    p.add_argument("--seed", type=int, help="default: config file, then $SUFFIXBENCH_SEED, then 0")
    p.add_argument("--out", required=True, help="root directory for run directories")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--split-manifest", help="directory with train.ids / eval.ids to reuse")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument("--jobs", type=int, default=1, help="architectures trained in parallel")
    for name, kind in (
        ("layers", int), ("d_z", int), ("heads", int), ("filter_size", int), ("dropout", float),
        ("max_epochs", int), ("patience", int), ("lr", float), ("w_act", float), ("w_time", float),
        ("batch_size", int), ("clip_norm", float), ("train_fraction", float),
        ("tau_start", float), ("tau_end", float), ("open_loop_p", float), ("adv_weight", float),
    ):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    p.add_argument("--no-bert-canvas-fill", dest="bert_canvas_fill", action="store_const", const=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="generate suffixes for the eval split and write reports")
    p.add_argument("--log", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--out", help="default: <run dir>/eval")
    p.add_argument("--split-manifest", help="default: the checkpoint's run directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--include-eos-time", action="store_true")
    p.add_argument("--no-charts", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation reports and tag best/worst per dataset")
    p.add_argument("--runs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synthesize", help="write a synthetic log as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="key = value process spec")
    src.add_argument("--preset", choices=("memorization", "skewed"))
    p.add_argument("--loop-p", type=float, default=0.6)
    p.add_argument("--n-traces", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"suffixbench {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except EmptyLogError as exc:
        print(f"suffixbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
