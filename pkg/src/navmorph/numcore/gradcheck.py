"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from navmorph.numcore.layers import ParameterSet
from navmorph.numcore.tensor import Tape, Tensor, no_grad

# Relative errors are measured against max(|analytic|, |numeric|, REL_FLOOR) so
# entries whose true gradient is ~0 are judged on an absolute scale instead.
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_parameter: str
    worst_index: tuple
    n_checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def analytic_gradients(loss_fn: Callable[[], Tensor], params: ParameterSet) -> dict:
    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }


def check_gradients(loss_fn: Callable[[], Tensor], params: ParameterSet,
                    step: float = 1e-5, names: list[str] | None = None) -> GradCheckResult:
    """Compare tape gradients with central differences for every scalar entry
    of the selected parameters.  ``loss_fn`` must be deterministic."""
    analytic = analytic_gradients(loss_fn, params)
    worst = (0.0, "", ())
    count = 0
    for name in names or list(params):
        p = params[name]
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                up = loss_fn().item()
            flat[i] = orig - step
            with no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        err = relative_error(analytic[name].reshape(-1), numeric)
        count += flat.size
        i = int(np.argmax(err)) if err.size else 0
        if err.size and err[i] > worst[0]:
            worst = (float(err[i]), name, np.unravel_index(i, p.shape))
    return GradCheckResult(worst[0], worst[1], tuple(int(j) for j in worst[2]), count)
