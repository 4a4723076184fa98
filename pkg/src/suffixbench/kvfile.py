"""Flat ``key = value`` text files used for run configs and process specs."""

from __future__ import annotations

from pathlib import Path


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped.

    >>> parse_kv("seed = 3  # run seed\\narch=gpt")
    {'seed': '3', 'arch': 'gpt'}
    """
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {line_no}: empty key")
        if key in out:
            raise ValueError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {values[k]}\n" for k in sorted(values))
