"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst: str

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= 1e-3


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare backward() against central differences of ``fn``.

    ``fn`` rebuilds the scalar output from ``inputs`` on every call, so it
    must be deterministic. With ``max_entries`` only that many randomly
    chosen coordinates per input are perturbed.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst, worst_name, checked = 0.0, "", 0
    for idx_input, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            plus = fn().item()
            flat[c] = orig - eps
            minus = fn().item()
            flat[c] = orig
            numeric = (plus - minus) / (2 * eps)
            err = relative_error(float(analytic[idx_input].reshape(-1)[c]), numeric)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{t.name or f'input{idx_input}'}[{c}]"
    for t in inputs:
        t.grad = None
    return GradCheckResult(worst, checked, worst_name)
