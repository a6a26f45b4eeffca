"""Adam optimizer over named parameter dicts.

Standard update with beta1=0.9, beta2=0.999, eps=1e-8 and bias correction;
moments start at zero. Parameters are updated in place.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DEFAULT_LR = 1e-4
BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamState:
    """First/second moment estimates plus the step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = DEFAULT_LR,
) -> AdamState:
    """One Adam update; mutates `params` and `state`, returns `state`."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + EPS)
    return state
