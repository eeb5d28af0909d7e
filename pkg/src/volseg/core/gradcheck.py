"""Finite-difference verification of analytic gradients.

``grad_check`` compares reverse-mode gradients of a scalar-valued function
against central differences. Comparisons use a floored relative error

    rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)

so that near-zero gradients are judged on an absolute scale instead of
blowing up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .tensor import Tensor, backward

__all__ = ["GradCheckReport", "grad_check"]


@dataclass
class GradCheckReport:
    """Outcome of one gradient check."""

    max_rel_error: float
    tolerance: float
    coords_checked: int
    worst_coord: tuple = ()
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel error {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}, {self.coords_checked} coords)"
        )


def _eval_scalar(f, data: np.ndarray) -> float:
    out = f(Tensor(data.copy()))
    if not isinstance(out, Tensor) or out.size != 1:
        raise UsageError("grad_check requires f to return a scalar Tensor")
    return float(out.data.reshape(()))


def grad_check(
    f,
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 256,
    rng: np.random.Generator | None = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Check ``d f(x) / d x`` against central finite differences.

    ``f`` must be deterministic (verified with a repeated evaluation) and
    must not mutate its argument. At most ``max_coords`` coordinates are
    probed, sampled without replacement when ``x`` is larger than that.
    """
    if not isinstance(x, Tensor):
        raise UsageError("grad_check expects a Tensor input")
    base = np.array(x.data, dtype=np.float64)

    first = _eval_scalar(f, base)
    second = _eval_scalar(f, base)
    if first != second:
        raise UsageError("f is not deterministic: two evaluations differ")

    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    if leaf.grad is None:
        raise UsageError("f does not reach the input: no gradient flowed back")
    analytic = leaf.grad.reshape(-1)

    n = base.size
    if n <= max_coords:
        coords = np.arange(n)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)

    flat = base.reshape(-1)
    max_rel, worst = 0.0, ()
    failures = []
    for c in coords:
        c = int(c)
        keep = flat[c]
        flat[c] = keep + eps
        up = _eval_scalar(f, base)
        flat[c] = keep - eps
        down = _eval_scalar(f, base)
        flat[c] = keep
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[c])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if rel > max_rel:
            max_rel = rel
            worst = np.unravel_index(c, x.data.shape)
        if rel > tol:
            failures.append((np.unravel_index(c, x.data.shape), a, numeric, rel))

    return GradCheckReport(
        max_rel_error=max_rel,
        tolerance=tol,
        coords_checked=len(coords),
        worst_coord=worst,
        failures=failures,
    )
