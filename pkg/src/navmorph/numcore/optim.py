"""Adaptive-moment (Adam) optimizer over a ParameterSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from navmorph.errors import DomainError, NonFiniteError
from navmorph.numcore.layers import ParameterSet


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: ParameterSet, state: OptimizerState,
                   grads: dict[str, np.ndarray] | None = None,
                   max_grad_norm: float | None = None) -> None:
    """Apply one Adam update in place.

    ``grads`` defaults to each parameter's accumulated ``.grad`` (missing
    gradients count as zero).  With ``max_grad_norm`` the global gradient
    norm is clipped before the update.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    resolved = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        resolved[name] = g
    if max_grad_norm is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in resolved.values()))
        if total > max_grad_norm:
            scale = max_grad_norm / total
            resolved = {name: g * scale for name, g in resolved.items()}

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = resolved[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    def __init__(self, params: ParameterSet, lr: float = 3e-4,
                 max_grad_norm: float | None = None):
        if not lr > 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.state = OptimizerState(learning_rate=lr)
        self.max_grad_norm = max_grad_norm

    def step(self) -> None:
        optimizer_step(self.params, self.state, max_grad_norm=self.max_grad_norm)

    def zero_grad(self) -> None:
        self.params.zero_grad()
