"""Stochastic gradient descent with classical momentum and coupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    """Velocity buffers plus the hyperparameters of the running phase.

    active lists the parameter names this phase updates; everything else is
    left untouched (including decay).
    """

    learning_rate: float
    momentum: float = 0.99
    weight_decay: float = 0.0005
    phase: int = 1
    active: list = field(default_factory=list)
    velocities: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, store, active, learning_rate, momentum, weight_decay, phase):
        vel = {name: np.zeros_like(store[name].data) for name in active}
        return cls(learning_rate=learning_rate, momentum=momentum,
                   weight_decay=weight_decay, phase=phase,
                   active=list(active), velocities=vel)


def sgd_step(store, grads, state):
    """v <- m*v + g + wd*p ; p <- p - lr*v, over the active parameter set."""
    lr, m, wd = state.learning_rate, state.momentum, state.weight_decay
    for name in state.active:
        p = store[name]
        v = state.velocities[name]
        v *= m
        v += grads[name]
        if wd:
            v += wd * p.data
        p.data -= lr * v
