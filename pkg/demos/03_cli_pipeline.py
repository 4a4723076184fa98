"""
The command-line pipeline end to end
====================================

synthesize -> ingest -> train -> evaluate -> report, in a scratch directory.
Each step is the same call the ``suffixbench`` console script makes.

Run: python demos/03_cli_pipeline.py
"""

import tempfile
from pathlib import Path

from suffixbench.cli import main

work = Path(tempfile.mkdtemp(prefix="suffixbench-"))
print("working in", work)


def run(*argv):
    print("$ suffixbench", " ".join(argv))
    code = main(list(argv))
    if code:
        raise SystemExit(code)


run("synthesize", "--preset", "memorization", "--n-traces", "120", "--out", str(work / "memo.csv"))
run("ingest", "--input", str(work / "memo.csv"), "--format", "csv", "--out", str(work / "memo"))

# small models and few epochs: this demo shows the plumbing, not the accuracy
for arch in ("gpt", "wavenet"):
    run("train", "--log", str(work / "memo"), "--arch", arch, "--out", str(work / "runs"),
        "--layers", "2", "--d-z", "32", "--max-epochs", "20", "--patience", "5", "--lr", "0.003")
    run("evaluate", "--log", str(work / "memo"), "--checkpoint", str(work / "runs" / f"memo-{arch}-0"))

run("report", "--runs", str(work / "runs"))
print((work / "runs" / "combined.csv").read_text().splitlines()[0])
