"""Plain-array optimizer steps: SGD, decoupled-weight-decay Adam, step decay.

All steps are pure: inputs are never mutated, each call returns fresh
arrays.  Betas and eps default to the adaptive optimizer's canonical
constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamVector

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """First/second moment buffers plus a step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, size: int) -> "OptimizerState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.t)


def _check_shapes(params: ParamVector, grad: ParamVector):
    if len(params) != len(grad):
        raise ValueError(f"shape mismatch: params has {len(params)} entries, grad has {len(grad)}")


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    if lr <= 0:
        raise ValueError("lr must be positive")
    _check_shapes(params, grad)
    return params.like(params.values - lr * grad.values)


def adamw_step(
    params: ParamVector,
    grad: ParamVector,
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> tuple[ParamVector, OptimizerState]:
    """One decoupled-weight-decay adaptive step with bias correction."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    if not (0 <= b1 < 1 and 0 <= b2 < 1):
        raise ValueError("betas must lie in [0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_shapes(params, grad)
    if state.m.size != len(params):
        raise ValueError("optimizer state does not match parameter size")

    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad.values
    v = b2 * state.v + (1.0 - b2) * grad.values**2
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_values = params.values * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.like(new_values), OptimizerState(m=m, v=v, t=t)


def step_decay_lr(lr0: float, step_size: int, gamma: float, t: int) -> float:
    """Piecewise-constant decay: lr0 * gamma^floor(t / step_size)."""
    if step_size < 1:
        raise ValueError("step_size must be >= 1")
    if not (0 < gamma <= 1):
        raise ValueError("gamma must lie in (0, 1]")
    return lr0 * gamma ** (t // step_size)
