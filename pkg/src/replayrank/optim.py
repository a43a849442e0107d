"""Adam with coupled L2 regularization.

Matches the training protocol: lr 5e-5, lambda 1e-5, and the optimizer's
conventional defaults beta1=0.9, beta2=0.999, eps=1e-8. The L2 term is
added to the gradient *before* the moment updates (coupled weight decay).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimError(ValueError):
    """Raised on non-finite gradients, naming the offending tensor."""


@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-5
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter scratch, reused across steps to avoid re-allocating
    # hundreds of MB of temporaries on large models
    _scratch: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One in-place Adam update for every tensor present in `grads`."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise OptimError(f"gradient shape {g.shape} != parameter shape {theta.shape} for '{name}'")
        if not np.isfinite(g).all():
            raise OptimError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
            state._scratch[name] = np.empty_like(theta)
        m, v, buf = state.m[name], state.v[name], state._scratch[name]

        # buf <- g' = g + l2*theta (coupled weight decay)
        np.multiply(theta, state.l2, out=buf)
        buf += g
        # m <- beta1*m + (1-beta1)*g' ; v <- beta2*v + (1-beta2)*g'^2
        # buf is downscaled for the m update, then squared and rescaled
        # for the v update, so one scratch buffer suffices
        m *= state.beta1
        buf *= 1.0 - state.beta1
        m += buf
        np.multiply(buf, buf, out=buf)
        buf *= (1.0 - state.beta2) / (1.0 - state.beta1) ** 2
        v *= state.beta2
        v += buf
        # theta <- theta - lr * (m/bc1) / (sqrt(v/bc2) + eps)
        np.multiply(v, 1.0 / bc2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf *= state.lr / bc1
        theta -= buf
