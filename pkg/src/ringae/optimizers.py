"""Adam (network parameters) and plain SGD (tensor-ring cores).

Parameters and gradients are parallel lists of arrays; updates are applied
in place and are deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndtensor import ShapeError


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SgdConfig:
    lr: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"sgd learning rate must be positive, got {self.lr}")


def init_adam(params: list, lr: float = 0.001) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params], lr=lr)


def _check_shapes(params: list, grads: list, who: str) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{who}: {len(params)} parameter arrays vs {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"{who}: parameter shape {p.shape} vs gradient shape {g.shape}")


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """One bias-corrected Adam update; mutates params and state in place."""
    _check_shapes(params, grads, "adam_step")
    _check_shapes(params, state.m, "adam_step (state)")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def sgd_step(cfg: SgdConfig, params: list, grads: list) -> list:
    """Plain gradient descent step; mutates params in place."""
    _check_shapes(params, grads, "sgd_step")
    for p, g in zip(params, grads):
        p -= cfg.lr * g
    return params
