"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One Adam update in place. params: name -> Tensor, grads: name -> array."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.value.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros(p.value.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.value.shape, dtype=np.float64)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.value = (p.value.astype(np.float64) - update).astype(p.value.dtype)
