from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from activeindex.errors import NumericError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    t: int = 0

    def __post_init__(self):
        self.params = np.array(self.params, dtype=np.float64, copy=True)
        self.m = np.zeros_like(self.params)
        self.v = np.zeros_like(self.params)


def adam_step(state: AdamState, gradient: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam descent step; updates ``state`` in place and returns the new parameters."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != state.params.shape:
        raise NumericError(f"gradient shape {g.shape} != parameter shape {state.params.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to Adam")
    state.t += 1
    state.m = BETA1 * state.m + (1.0 - BETA1) * g
    state.v = BETA2 * state.v + (1.0 - BETA2) * g * g
    m_hat = state.m / (1.0 - BETA1**state.t)
    v_hat = state.v / (1.0 - BETA2**state.t)
    state.params = state.params - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return state.params
