"""Bias-corrected Adam in functional form.

State is immutable: :func:`adam_step` returns a fresh parameter array and a
fresh state, which keeps optimization loops trivially replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if int(n) < 1:
            raise ConfigError(f"state needs at least one coordinate, got n={n}")
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        return cls(m=np.zeros(n), v=np.zeros(n), lr=float(lr), beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state, params, grad):
    """One Adam update. Returns ``(new_params, new_state)``; inputs untouched."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise DimensionError(
            f"adam_step shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m, v=v, lr=state.lr, step_count=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_params, new_state
