"""Adam with bias correction, in functional form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8, state: AdamState | None = None):
    """Return ``(new_params, new_state)``; inputs are left untouched.

    ``params`` and ``grads`` map names to arrays.  Names missing from
    ``grads`` (or mapped to None) are treated as zero gradients.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    state = state or AdamState()
    step = state.step + 1
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        p = np.asarray(p)
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=p.dtype)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = (beta1 * m + (1.0 - beta1) * g).astype(p.dtype)
        v = (beta2 * v + (1.0 - beta2) * g * g).astype(p.dtype)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[name] = (p - update).astype(p.dtype)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=step, m=new_m, v=new_v)
