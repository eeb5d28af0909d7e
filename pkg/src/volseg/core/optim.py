"""Adaptive-moment optimiser with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericsError, UsageError
from .tensor import Tensor

__all__ = ["OptimizerState", "AdamW"]


@dataclass
class OptimizerState:
    """Per-parameter first/second moment estimates keyed by parameter name."""

    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Adam update with weight decay applied directly to the parameters.

    Update per parameter ``p`` with gradient ``g``::

        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    where the hatted moments are bias-corrected by the step count.
    """

    def __init__(
        self,
        named_params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        if not 0.0 < lr:
            raise UsageError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise UsageError(f"betas must lie in [0, 1), got {betas}")
        self.params = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState()
        for name, p in self.params.items():
            self.state.exp_avg[name] = np.zeros_like(p.data)
            self.state.exp_avg_sq[name] = np.zeros_like(p.data)

    def step(self) -> None:
        """Apply one update; every parameter must hold a gradient."""
        self.state.step += 1
        b1, b2 = self.betas
        t = self.state.step
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            if p.grad is None:
                raise UsageError(f"parameter '{name}' has no gradient; run backward first")
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"gradient of '{name}' is not finite")
            m = self.state.exp_avg[name]
            v = self.state.exp_avg_sq[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
