"""Exact differentiation through k unrolled inner optimizer steps.

Each inner step is recorded on its own tape: the inner loss is built from
(phi, alpha) leaves, its gradient with respect to phi is produced as
traced nodes, and the optimizer update is applied as traced arithmetic so
that the step output `phi_next` is a node depending on both leaves.  The
reverse sweep then walks the steps backwards, propagating a cotangent
vector p through each step's Jacobian:

    p_t       = d(p_{t+1} . phi_{t+1}) / d phi_t     (curvature included)
    d/d alpha += d(p_{t+1} . phi_{t+1}) / d alpha

For plain gradient-descent steps this is exact, including the mixed
second-order terms that appear for k > 1.  For the adaptive optimizer the
moment buffers entering a step are treated as constants (detached at step
boundaries); only the dependence of the update on the current step's
gradient is differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .optim import ADAM_BETAS, ADAM_EPS, OptimizerState
from .params import ParamVector

SGD = "sgd"
ADAMW = "adamw"

# builder(tape, phi_leaves, alpha_leaf) -> scalar loss node
InnerLossBuilder = Callable[[ad.Tape, list[ad.Node], ad.Node], ad.Node]
# builder(tape, phi_leaves) -> scalar loss node
MetaLossBuilder = Callable[[ad.Tape, list[ad.Node]], ad.Node]


class UnrollDivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite inner loss at unroll step {step}: {value}")
        self.step = step


@dataclass
class UnrollStep:
    tape: ad.Tape
    phi_leaves: list[ad.Node]
    alpha_leaf: ad.Node
    new_phi_nodes: list[ad.Node]
    loss_value: float


def _block_slices(params: ParamVector) -> list[slice]:
    slices = []
    offset = 0
    for b in params.blocks:
        slices.append(slice(offset, offset + b.size))
        offset += b.size
    return slices


def _traced_step(
    builder: InnerLossBuilder,
    phi: ParamVector,
    alpha: ParamVector,
    optimizer: str,
    lr: float,
    state: OptimizerState | None,
    weight_decay: float,
    betas: tuple[float, float],
    eps: float,
    step_index: int,
) -> tuple[UnrollStep, ParamVector, OptimizerState | None]:
    tape = ad.Tape()
    phi_leaves = [tape.leaf(arr, name) for name, arr in phi.block_arrays()]
    alpha_leaf = tape.leaf(alpha.values, "alpha")
    loss = builder(tape, phi_leaves, alpha_leaf)
    loss_value = float(loss.value)
    if not np.isfinite(loss_value):
        raise UnrollDivergenceError(step_index, loss_value)
    grad_nodes = tape.gradients(loss, phi_leaves)

    if optimizer == SGD:
        new_phi_nodes = [ad.sub(p, ad.mul(g, lr)) for p, g in zip(phi_leaves, grad_nodes)]
        new_state = state
    elif optimizer == ADAMW:
        assert state is not None
        b1, b2 = betas
        t_next = state.t + 1
        c1 = 1.0 / (1.0 - b1**t_next)
        c2 = 1.0 / (1.0 - b2**t_next)
        slices = _block_slices(phi)
        new_phi_nodes = []
        m_next = np.empty_like(state.m)
        v_next = np.empty_like(state.v)
        for p, g, sl, blk in zip(phi_leaves, grad_nodes, slices, phi.blocks):
            m_prev = tape.constant(state.m[sl].reshape(blk.shape))
            v_prev = tape.constant(state.v[sl].reshape(blk.shape))
            m_node = ad.add(ad.mul(m_prev, b1), ad.mul(g, 1.0 - b1))
            v_node = ad.add(ad.mul(v_prev, b2), ad.mul(ad.square(g), 1.0 - b2))
            # the 1e-24 shift keeps sqrt's backward finite where a
            # coordinate's gradient is exactly zero (v_hat = 0)
            vhat = ad.add(ad.mul(v_node, c2), 1e-24)
            update = ad.div(ad.mul(m_node, c1), ad.add(ad.sqrt(vhat), eps))
            new_p = ad.sub(ad.mul(p, 1.0 - lr * weight_decay), ad.mul(update, lr))
            new_phi_nodes.append(new_p)
            m_next[sl] = m_node.value.ravel()
            v_next[sl] = v_node.value.ravel()
        new_state = OptimizerState(m=m_next, v=v_next, t=t_next)
    else:
        raise ValueError(f"unknown inner optimizer '{optimizer}'")

    phi_next = ParamVector.from_blocks(
        [(blk.name, node.value) for blk, node in zip(phi.blocks, new_phi_nodes)]
    )
    step = UnrollStep(tape, phi_leaves, alpha_leaf, new_phi_nodes, loss_value)
    return step, phi_next, new_state


def unroll_window(
    builders: Sequence[InnerLossBuilder],
    phi0: ParamVector,
    alpha: ParamVector,
    optimizer: str = SGD,
    lr: float = 1e-3,
    state: OptimizerState | None = None,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> tuple[ParamVector, OptimizerState | None, list[UnrollStep]]:
    """Run one traced window of inner steps, keeping each step's tape."""
    if optimizer == ADAMW and state is None:
        state = OptimizerState.fresh(len(phi0))
    phi = phi0
    steps: list[UnrollStep] = []
    for i, builder in enumerate(builders):
        step, phi, state = _traced_step(
            builder, phi, alpha, optimizer, lr, state, weight_decay, betas, eps, i
        )
        steps.append(step)
    return phi, state, steps


def window_hypergrad(steps: Sequence[UnrollStep], meta_grad: ParamVector, alpha_len: int) -> np.ndarray:
    """Reverse sweep over a recorded window.

    `meta_grad` is the gradient of the upper objective at the window's
    final parameters.  Returns d(upper objective)/d(alpha).
    """
    p_blocks = [arr for _, arr in meta_grad.block_arrays()]
    g_alpha = np.zeros(alpha_len)
    for step in reversed(steps):
        terms = None
        for p_arr, node in zip(p_blocks, step.new_phi_nodes):
            term = ad.sum_(ad.mul(step.tape.constant(p_arr), node))
            terms = term if terms is None else ad.add(terms, term)
        wrt = list(step.phi_leaves) + [step.alpha_leaf]
        grads = step.tape.gradients(terms, wrt)
        p_blocks = [g.value.reshape(leaf.value.shape) for g, leaf in zip(grads, step.phi_leaves)]
        g_alpha = g_alpha + grads[-1].value.ravel()
    return g_alpha


def meta_gradient(
    meta_loss: MetaLossBuilder, phi: ParamVector
) -> tuple[float, ParamVector]:
    """Value and gradient of the upper objective at fixed parameters."""
    tape = ad.Tape()
    leaves = [tape.leaf(arr, name) for name, arr in phi.block_arrays()]
    loss = meta_loss(tape, leaves)
    value = float(loss.value)
    grads = tape.gradients(loss, leaves)
    grad_vec = ParamVector.from_blocks(
        [(blk.name, g.value.reshape(leaf.value.shape)) for blk, leaf, g in zip(phi.blocks, leaves, grads)]
    )
    return value, grad_vec


def hypergrad_unrolled(
    inner_loss: InnerLossBuilder,
    meta_loss: MetaLossBuilder,
    phi0: ParamVector,
    alpha: ParamVector,
    k: int,
    beta1: float,
    inner_optimizer: str = SGD,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> tuple[ParamVector, ParamVector]:
    """k inner updates plus the derivative of the meta loss wrt alpha.

    Returns (dMeta/dAlpha, phi_k).  The adaptive inner optimizer starts
    from fresh moment buffers; use `unroll_window` directly to thread
    persistent state across windows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    builders = [inner_loss] * k
    phi_k, _, steps = unroll_window(
        builders, phi0, alpha, inner_optimizer, beta1,
        weight_decay=weight_decay, betas=betas, eps=eps,
    )
    _, mgrad = meta_gradient(meta_loss, phi_k)
    g_alpha = window_hypergrad(steps, mgrad, len(alpha))
    return alpha.like(g_alpha), phi_k
