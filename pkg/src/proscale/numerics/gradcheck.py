"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError, ValidationError
from .tensor import Tensor, grad


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool
    probe_count: int
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (
            f"{status} {self.op_name}: max_rel_error={self.max_rel_error:.3e} "
            f"max_abs_error={self.max_abs_error:.3e} probes={self.probe_count} tol={self.tolerance:g}"
        )
        return f"{text} ({self.detail})" if self.detail else text


def _step(x: float) -> float:
    return 1e-5 * (1.0 + abs(x))


def finite_diff_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-5,
    seed: int = 0,
    op_name: str | None = None,
    max_probes: int | None = None,
    wrt: Sequence[int] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``op`` with central differences.

    ``op`` maps the input tensors to a tensor; it is reduced to a scalar by a
    seeded Gaussian projection. ``wrt`` selects which inputs are probed
    (default: all). When ``max_probes`` is set, that many coordinates are
    drawn uniformly from the probed inputs instead of checking every one.
    """
    name = op_name or getattr(op, "__name__", "op")
    if tolerance <= 0:
        raise ValidationError("tolerance must be positive")
    for t in inputs:
        if t.dtype != np.float64:
            raise ValidationError(f"{name}: gradient checks require float64 inputs")
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    rng = np.random.default_rng(seed)

    leaves = [Tensor(t.data, requires_grad=i in wrt) for i, t in enumerate(inputs)]
    try:
        out = op(*leaves)
    except NumericError as exc:
        return GradCheckReport(name, float("inf"), float("inf"), False, 0, tolerance, f"forward failed: {exc}")
    projection = rng.standard_normal(out.shape)
    try:
        analytic = grad(out, [leaves[i] for i in wrt], projection)
    except NumericError as exc:
        return GradCheckReport(name, float("inf"), float("inf"), False, 0, tolerance, f"NaN/Inf in backward: {exc}")

    def evaluate(arrays: list[np.ndarray]) -> np.ndarray:
        return op(*[Tensor(a) for a in arrays]).data

    coords = [(k, flat) for k, i in enumerate(wrt) for flat in range(inputs[i].data.size)]
    if max_probes is not None and max_probes < len(coords):
        picks = rng.choice(len(coords), size=max_probes, replace=False)
        coords = [coords[p] for p in sorted(picks)]

    base = [np.array(t.data) for t in inputs]
    max_rel = max_abs = 0.0
    worst = ""
    for k, flat in coords:
        i = wrt[k]
        x0 = base[i].flat[flat]
        h = _step(x0)
        arrays = list(base)
        plus = base[i].copy()
        plus.flat[flat] = x0 + h
        minus = base[i].copy()
        minus.flat[flat] = x0 - h
        try:
            arrays[i] = plus
            out_plus = evaluate(arrays)
            arrays[i] = minus
            out_minus = evaluate(arrays)
        except NumericError as exc:
            return GradCheckReport(
                name, float("inf"), float("inf"), False, len(coords), tolerance,
                f"NaN/Inf in perturbed forward at input {i} index {flat}: {exc}",
            )
        # difference before projecting: avoids cancellation between two large sums
        numeric = math.fsum(((out_plus - out_minus) * projection).ravel()) / (2 * h)
        exact = float(analytic[k].flat[flat])
        if not (np.isfinite(numeric) and np.isfinite(exact)):
            return GradCheckReport(
                name, float("inf"), float("inf"), False, len(coords), tolerance,
                f"NaN/Inf gradient at input {i} index {flat}: analytic={exact} numeric={numeric}",
            )
        abs_err = abs(exact - numeric)
        rel_err = abs_err / (abs(exact) + abs(numeric) + 1e-12)
        max_abs = max(max_abs, abs_err)
        if rel_err > max_rel:
            max_rel = rel_err
            worst = f"worst at input {i} index {flat}"
    passed = max_rel <= tolerance
    return GradCheckReport(name, max_rel, max_abs, passed, len(coords), tolerance, "" if passed else worst)
