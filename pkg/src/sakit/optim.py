"""Classical SGD with momentum and L2 weight decay folded into the gradient."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SgdState:
    """Optimizer hyperparameters plus per-parameter velocity buffers.

    ``no_decay`` lists parameter names exempt from weight decay (used when
    batchnorm scales should keep their trained magnitudes untouched).
    """

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)
    no_decay: frozenset = frozenset()

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")


def sgd_step(state: SgdState, params: dict, grads: dict):
    """In-place update: v <- momentum*v + grad + wd*param; param <- param - lr*v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for '{name}'")
        wd = 0.0 if name in state.no_decay else state.weight_decay
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v + g + wd * p
        state.velocity[name] = v
        p -= state.learning_rate * v
    return params
