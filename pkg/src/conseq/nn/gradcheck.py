"""Finite-difference verification of analytic gradients.

For each parameter a sample of coordinates is perturbed by +-h and the
central difference is compared against the gradient the backward pass
produced.  The relative error uses an absolute floor so that coordinates
whose true gradient is zero are judged on finite-difference noise alone:

    rel_err = |analytic - numeric| / max(|analytic| + |numeric|, 1e-4)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from conseq.errors import ConfigError, NumericError

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
MIN_COORDS = 64
_REL_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative errors and the overall verdict."""

    tolerance: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    checked_coords: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self):
        width = max((len(name) for name in self.per_parameter), default=4)
        for name in sorted(self.per_parameter):
            err = self.per_parameter[name]
            verdict = "ok" if err < self.tolerance else "FAIL"
            yield f"{name:<{width}}  rel_err={err:.3e}  coords={self.checked_coords[name]:>4}  {verdict}"


def grad_check(
    loss_fn,
    params,
    rng: np.random.Generator | None = None,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_coords: int = MIN_COORDS,
) -> GradCheckReport:
    """Compare loss_fn's backward pass against central finite differences.

    loss_fn() must run forward and backward from scratch, leaving fresh
    gradients on the parameters, and return the scalar loss.  A function with
    no parameters trivially passes.
    """
    params = list(params)
    for p in params:
        if p.value.dtype != np.float64:
            raise ConfigError(f"gradient checking requires float64 parameters; {p.name} is {p.value.dtype}")
    if rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(tolerance=tolerance)
    if not params:
        return report

    for p in params:
        p.zero_grad()
    base_loss = loss_fn()
    if not np.isfinite(base_loss):
        raise NumericError(f"non-finite loss {base_loss} during gradient check")
    analytic = {p.name: p.grad.copy() for p in params}

    for p in params:
        size = p.value.size
        if size > max_coords:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        else:
            coords = np.arange(size)
        flat = p.value.reshape(-1)
        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + step
            loss_plus = loss_fn()
            flat[c] = original - step
            loss_minus = loss_fn()
            flat[c] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericError(f"non-finite loss while perturbing {p.name}[{c}]")
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            a = analytic[p.name].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), _REL_FLOOR)
            worst = max(worst, rel)
        report.per_parameter[p.name] = worst
        report.checked_coords[p.name] = len(coords)

    # leave the verified analytic gradients in place
    for p in params:
        p.grad[...] = analytic[p.name]
    return report
