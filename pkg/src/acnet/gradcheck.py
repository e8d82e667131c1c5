"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import EAGER, Tape, backward


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_error:.3e} ({self.worst}) tol {self.tolerance:g}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    loss_fn: Callable,
    params: dict[str, np.ndarray],
    tolerance: float,
    step: float = 1e-5,
    floor: float = 1e-6,
    names=None,
) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn(ops)`` must build a scalar loss reading each parameter via
    ``ops.param(name, params[name])``; it is called once with a :class:`Tape`
    and then repeatedly with the eager ops while ``params`` entries are nudged
    in place. Parameters must be float64. ``floor`` bounds the denominator of
    the relative error so that near-zero gradients are compared absolutely.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    tape = Tape()
    loss_fn(tape)
    analytic = backward(tape)
    report = GradCheckReport(tolerance)
    for name in names if names is not None else params:
        p = params[name]
        a = analytic.get(name, np.zeros_like(p))
        numeric = np.empty_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = float(loss_fn(EAGER))
            flat[i] = old - step
            down = float(loss_fn(EAGER))
            flat[i] = old
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        report.errors[name] = float(relative_error(a, numeric, floor).max())
    return report
