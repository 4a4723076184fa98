"""Synthetic event logs with controllable branching, durations and length skew."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .eventlog import EventLog, build_log
from .kvfile import read_kv

EPOCH_START = 1_577_836_800  # 2020-01-01T00:00:00Z


@dataclass(frozen=True)
class LoopSpec:
    """Block of activities repeated ``R`` times with ``P(R >= r) = p**r``.

    The block is inserted after the first ``after`` activities of every
    variant listed in ``variants`` (all variants when empty). With
    ``pick_one`` each repetition is a single activity drawn uniformly from
    ``activities`` instead of the whole block.
    """

    activities: tuple[str, ...]
    after: int
    p: float
    variants: tuple[int, ...] = ()
    pick_one: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("loop probability must lie in [0, 1)")
        if not self.activities:
            raise ValueError("loop block needs at least one activity")
        if self.after < 0:
            raise ValueError("loop position must be >= 0")


@dataclass(frozen=True)
class ProcessSpec:
    variants: tuple[tuple[tuple[str, ...], float], ...]
    durations: dict = field(default_factory=dict)  # activity -> (mean seconds, jitter)
    loop: LoopSpec | None = None
    default_duration: tuple[int, int] = (3600, 0)

    def __post_init__(self):
        if not self.variants:
            raise ValueError("process needs at least one variant")
        probs = [p for _, p in self.variants]
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"variant probabilities must be >= 0 and sum to 1, got {probs}")
        for acts, _ in self.variants:
            if not acts:
                raise ValueError("empty variant")
        for mean, jitter in list(self.durations.values()) + [self.default_duration]:
            if mean < 0 or jitter < 0:
                raise ValueError("duration mean and jitter must be >= 0")
        if self.loop is not None:
            for v in self.loop.variants:
                if not 0 <= v < len(self.variants):
                    raise ValueError(f"loop refers to unknown variant {v}")
                if self.loop.after > len(self.variants[v][0]):
                    raise ValueError("loop position beyond variant length")

    def duration_law(self, activity: str) -> tuple[int, int]:
        return tuple(self.durations.get(activity, self.default_duration))


def _draw_trace(spec: ProcessSpec, rng: np.random.Generator) -> list[tuple[str, int]]:
    probs = np.array([p for _, p in spec.variants])
    v = int(rng.choice(len(probs), p=probs / probs.sum()))
    acts = list(spec.variants[v][0])
    loop = spec.loop
    if loop is not None and (not loop.variants or v in loop.variants):
        # numpy's geometric counts trials up to the first success
        repeats = int(rng.geometric(1.0 - loop.p)) - 1 if loop.p > 0 else 0
        at = min(loop.after, len(acts))
        if loop.pick_one:
            body = [loop.activities[i] for i in rng.integers(0, len(loop.activities), size=repeats)]
        else:
            body = list(loop.activities) * repeats
        acts = acts[:at] + body + acts[at:]
    out = []
    for i, a in enumerate(acts):
        mean, jitter = spec.duration_law(a)
        d = mean + (int(rng.integers(-jitter, jitter + 1)) if jitter else 0)
        out.append((a, 0 if i == 0 else max(0, d)))
    return out


def sample_cases(spec: ProcessSpec, n_traces: int, seed: int) -> list[tuple[str, list[tuple[str, int]]]]:
    """Draw ``(case_id, [(activity, epoch_seconds), ...])`` groups.

    Trace ``i`` uses its own stream derived from ``(seed, i)``, so a trace does
    not depend on how many others are drawn.
    """
    if n_traces < 1:
        raise ValueError("n_traces must be >= 1")
    width = len(str(n_traces - 1))
    cases = []
    for i in range(n_traces):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        start = EPOCH_START + int(rng.integers(0, 365 * 86400))
        stamp = start
        events = []
        for a, d in _draw_trace(spec, rng):
            stamp += d
            events.append((a, stamp))
        cases.append((f"case-{i:0{width}d}", events))
    return cases


def sample_log(spec: ProcessSpec, n_traces: int, seed: int = 0, name: str = "synthetic") -> EventLog:
    return build_log(sample_cases(spec, n_traces, seed), name=name)


def _iso(stamp: int) -> str:
    return datetime.fromtimestamp(stamp, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_csv(path, cases: Sequence[tuple[str, Sequence[tuple[str, int]]]]) -> None:
    """Write cases in the CSV parser's default schema."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "activity", "timestamp"])
        for case_id, events in cases:
            for a, stamp in events:
                writer.writerow([case_id, a, _iso(stamp)])


# --- spec files ----------------------------------------------------------------

def spec_from_dict(values: dict[str, str]) -> ProcessSpec:
    """Build a spec from flat keys.

    ``variant.N = A B C`` and ``variant.N.p = 0.5`` define branches (N from 1);
    ``duration.X = mean jitter`` sets per-activity laws, ``duration.default``
    the fallback; ``loop.activities``, ``loop.after``, ``loop.p`` and optional
    ``loop.variants`` (1-based ids) and ``loop.pick_one`` describe the
    repeated block.
    """
    ids = sorted({int(k.split(".")[1]) for k in values if k.startswith("variant.")})
    if not ids:
        raise ValueError("spec defines no variants")
    variants = []
    for i in ids:
        acts = tuple(values[f"variant.{i}"].split())
        p = values.get(f"variant.{i}.p")
        variants.append((acts, float(p) if p is not None else math.nan))
    missing = [i for i, (_, p) in enumerate(variants) if math.isnan(p)]
    if missing:
        rest = 1.0 - sum(p for _, p in variants if not math.isnan(p))
        variants = [(a, rest / len(missing) if math.isnan(p) else p) for a, p in variants]
    durations = {}
    default = (3600, 0)
    for key, value in values.items():
        if key.startswith("duration."):
            parts = value.split()
            law = (int(parts[0]), int(parts[1]) if len(parts) > 1 else 0)
            if key == "duration.default":
                default = law
            else:
                durations[key[len("duration."):]] = law
    loop = None
    if "loop.activities" in values:
        ids_index = {vid: n for n, vid in enumerate(ids)}
        chosen = tuple(ids_index[int(v)] for v in values.get("loop.variants", "").split())
        loop = LoopSpec(
            tuple(values["loop.activities"].split()),
            int(values.get("loop.after", "1")),
            float(values.get("loop.p", "0.5")),
            chosen,
            values.get("loop.pick_one", "false").lower() in ("true", "1", "yes"),
        )
    return ProcessSpec(tuple(variants), durations, loop, default)


def read_spec(path) -> ProcessSpec:
    return spec_from_dict(read_kv(path))


# --- workloads used by the demos and the acceptance suite ----------------------

def memorization_spec() -> ProcessSpec:
    """Three deterministic variants (lengths 4, 6, 8) over eight activities.

    The second activity identifies the variant, so every suffix is a function
    of any prefix with k >= 2. Durations are fixed per activity.
    """
    hours = {"A": 0, "B": 2, "C": 1, "D": 3, "E": 4, "F": 2, "G": 1, "H": 5}
    return ProcessSpec(
        (
            (("A", "B", "C", "D"), 1 / 3),
            (("A", "C", "E", "F", "G", "H"), 1 / 3),
            (("A", "D", "H", "G", "F", "E", "B", "C"), 1 - 2 / 3),
        ),
        {a: (h * 3600, 0) for a, h in hours.items()},
    )


def skewed_spec(loop_p: float = 0.6) -> ProcessSpec:
    """Two branches, one of which carries a geometric rework loop.

    Each repetition performs one of four rework activities at random. Short
    traces come from the loop-free branch and the loop branch with few
    repetitions; the long tail is made only of rework whose length and
    content cannot be read from the prefix.
    """
    return ProcessSpec(
        (
            (("A", "B", "C", "D", "E"), 0.5),
            (("A", "F", "G", "H", "I"), 0.5),
        ),
        {"A": (0, 0), "B": (3600, 600), "C": (7200, 600), "D": (3600, 600), "E": (1800, 300),
         "F": (5400, 600), "G": (3600, 600), "H": (7200, 900), "I": (1800, 300),
         "J": (2700, 300), "K": (5400, 900), "L": (1800, 600), "M": (3600, 300)},
        LoopSpec(("J", "K", "L", "M"), 3, loop_p, (1,), pick_one=True),
    )
