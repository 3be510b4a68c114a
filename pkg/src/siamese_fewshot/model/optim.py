"""SGD with Nesterov momentum and inverse-time learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Parameters


@dataclass
class SGDState:
    step: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def learning_rate(lr0: float, decay: float, step: int) -> float:
    return lr0 / (1.0 + decay * step)


def nesterov_update(p, g, v, lr, momentum):
    """v <- mu v - lr g ;  p <- p + mu v - lr g.  Returns (p, v)."""
    v = momentum * v - lr * g
    return p + momentum * v - lr * g, v


def sgd_step(params: Parameters, grads: dict[str, np.ndarray], config, state: SGDState) -> Parameters:
    """One update.  ``config`` needs ``learning_rate``, ``momentum`` and ``decay``; ``state`` is advanced."""
    lr = learning_rate(config.learning_rate, config.decay, state.step)
    mu = config.momentum
    new = {}
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        p_new, v = nesterov_update(p, g.astype(p.dtype, copy=False), v, p.dtype.type(lr), p.dtype.type(mu))
        state.velocity[name] = v
        new[name] = p_new
    state.step += 1
    return params.replace(new)
