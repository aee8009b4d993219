"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation appends a node to a Tape in evaluation order, so the node
list is always topologically sorted.  Backward rules are written in terms
of the same traced primitives, which means the nodes produced by one
backward pass can themselves be differentiated: that is what makes exact
differentiation through unrolled optimizer steps possible (the gradient of
an inner training loss becomes part of the graph, and a second backward
pass picks up the curvature terms).

Scope is deliberately narrow: 2-D matmul, row-vector bias broadcasting,
elementwise math, and axis reductions.  That is all the step scorer's
forward pass and both loss levels need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .params import BlockSpec, ParamVector

Array = np.ndarray


class NonFiniteGradientError(ArithmeticError):
    """Raised when a backward pass produces a NaN or infinite adjoint.

    Carries the name of the primitive whose adjoint went non-finite.
    """

    def __init__(self, op: str):
        super().__init__(f"non-finite gradient produced at op '{op}'")
        self.op = op


class Node:
    __slots__ = ("tape", "value", "parents", "vjps", "requires_grad", "op", "idx")

    def __init__(self, tape, value, parents, vjps, requires_grad, op):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.requires_grad = requires_grad
        self.op = op
        tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape}, idx={self.idx})"


class Tape:
    """Ordered record of primitive operations; creation order is topological."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def _register(self, node: Node):
        node.idx = len(self.nodes)
        self.nodes.append(node)

    def leaf(self, value, name: str = "leaf") -> Node:
        """Differentiable input node."""
        v = np.asarray(value, dtype=np.float64)
        return Node(self, v, (), (), True, name)

    def constant(self, value) -> Node:
        v = np.asarray(value, dtype=np.float64)
        return Node(self, v, (), (), False, "const")

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if not n.parents and n.requires_grad]

    def gradients(self, output: Node, wrt: Sequence[Node], check_finite: bool = True) -> list[Node]:
        """Reverse pass from a scalar output; returns one grad node per `wrt`.

        The grad nodes live on this tape and can be differentiated again.
        Nodes that do not influence the output get a zero gradient.
        """
        if output.tape is not self:
            raise ValueError("output node does not belong to this tape")
        if output.value.shape != ():
            raise ValueError(f"gradients require a scalar output, got shape {output.value.shape}")
        adjoint: dict[int, Node] = {output.idx: self.constant(1.0)}
        # Fixed range: nodes appended during the sweep have idx > output.idx.
        for i in range(output.idx, -1, -1):
            node = self.nodes[i]
            g = adjoint.get(i)
            if g is None or not node.requires_grad:
                continue
            if check_finite and not np.all(np.isfinite(g.value)):
                raise NonFiniteGradientError(node.op)
            for parent, vjp in zip(node.parents, node.vjps):
                if vjp is None or not parent.requires_grad:
                    continue
                pg = vjp(g)
                prev = adjoint.get(parent.idx)
                adjoint[parent.idx] = pg if prev is None else add(prev, pg)
        out = []
        for w in wrt:
            g = adjoint.get(w.idx)
            out.append(g if g is not None else self.constant(np.zeros_like(w.value)))
        return out


def _wrap(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _pair(a, b) -> tuple[Tape, Node, Node]:
    if isinstance(a, Node):
        return a.tape, a, _wrap(a.tape, b)
    if isinstance(b, Node):
        return b.tape, _wrap(b.tape, a), b
    raise TypeError("at least one operand must be a Node")


def _make(tape, value, parents, vjps, op) -> Node:
    rg = any(p.requires_grad for p in parents)
    return Node(tape, value, parents, vjps, rg, op)


def _unbroadcast(g: Node, target_shape: tuple[int, ...]) -> Node:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.value.shape == target_shape:
        return g
    while g.value.ndim > len(target_shape):
        g = sum_(g, axis=0)
    for axis, size in enumerate(target_shape):
        if size == 1 and g.value.shape[axis] != 1:
            g = sum_(g, axis=axis, keepdims=True)
    if g.value.shape != target_shape:
        g = reshape(g, target_shape)
    return g


def add(a, b) -> Node:
    tape, a, b = _pair(a, b)
    return _make(
        tape,
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
        "add",
    )


def sub(a, b) -> Node:
    tape, a, b = _pair(a, b)
    return _make(
        tape,
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(neg(g), b.value.shape),
        ),
        "sub",
    )


def neg(a: Node) -> Node:
    return _make(a.tape, -a.value, (a,), (lambda g: neg(g),), "neg")


def mul(a, b) -> Node:
    tape, a, b = _pair(a, b)
    return _make(
        tape,
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(mul(g, b), a.value.shape),
            lambda g: _unbroadcast(mul(g, a), b.value.shape),
        ),
        "mul",
    )


def div(a, b) -> Node:
    tape, a, b = _pair(a, b)
    return _make(
        tape,
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(div(g, b), a.value.shape),
            lambda g: _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.value.shape),
        ),
        "div",
    )


def matmul(a: Node, b: Node) -> Node:
    tape, a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return _make(
        tape,
        a.value @ b.value,
        (a, b),
        (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
        "matmul",
    )


def transpose(a: Node) -> Node:
    return _make(a.tape, a.value.T.copy(), (a,), (lambda g: transpose(g),), "transpose")


def power_const(a: Node, exponent: float) -> Node:
    e = float(exponent)
    return _make(
        a.tape,
        a.value**e,
        (a,),
        (lambda g: mul(mul(g, e), power_const(a, e - 1.0)),),
        "pow",
    )


def square(a: Node) -> Node:
    return power_const(a, 2.0)


def sqrt(a: Node) -> Node:
    out = _make(a.tape, np.sqrt(a.value), (a,), None, "sqrt")
    out.vjps = (lambda g: div(mul(g, 0.5), out),)
    return out


def exp(a: Node) -> Node:
    out = _make(a.tape, np.exp(a.value), (a,), None, "exp")
    out.vjps = (lambda g: mul(g, out),)
    return out


def log(a: Node) -> Node:
    return _make(a.tape, np.log(a.value), (a,), (lambda g: div(g, a),), "log")


def sigmoid(a: Node) -> Node:
    # Stable two-sided evaluation; derivative is y * (1 - y).
    v = np.where(a.value >= 0, 1.0 / (1.0 + np.exp(-a.value)), np.exp(a.value) / (1.0 + np.exp(a.value)))
    out = _make(a.tape, v, (a,), None, "sigmoid")
    out.vjps = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


def tanh(a: Node) -> Node:
    out = _make(a.tape, np.tanh(a.value), (a,), None, "tanh")
    out.vjps = (lambda g: mul(g, sub(1.0, square(out))),)
    return out


def clamp(a: Node, lo: float, hi: float) -> Node:
    v = np.clip(a.value, lo, hi)
    mask = ((a.value > lo) & (a.value < hi)).astype(np.float64)
    return _make(a.tape, v, (a,), (lambda g: mul(g, a.tape.constant(mask)),), "clamp")


def sum_(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    in_shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            kept = list(in_shape)
            kept[axis] = 1
            g = reshape(g, tuple(kept))
        return broadcast_to(g, in_shape)

    return _make(a.tape, np.sum(a.value, axis=axis, keepdims=keepdims), (a,), (vjp,), "sum")


def mean(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def reshape(a: Node, shape: tuple[int, ...]) -> Node:
    in_shape = a.value.shape
    return _make(
        a.tape,
        a.value.reshape(shape),
        (a,),
        (lambda g: reshape(g, in_shape),),
        "reshape",
    )


def broadcast_to(a: Node, shape: tuple[int, ...]) -> Node:
    in_shape = a.value.shape
    return _make(
        a.tape,
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        (lambda g: _unbroadcast(g, in_shape),),
        "broadcast",
    )


def dot(a: Node, b) -> Node:
    """Inner product of two flat vectors (or scalars)."""
    return sum_(mul(a, b))


def backward_grad(tape: Tape, loss: Node) -> ParamVector:
    """Gradient of a scalar loss with respect to every differentiable leaf.

    Leaves are returned flattened into one ParamVector, blocks in leaf
    creation order; leaves that do not reach the loss get zeros.
    """
    leaves = tape.leaves()
    if not leaves:
        raise ValueError("tape has no differentiable leaves")
    grads = tape.gradients(loss, leaves, check_finite=True)
    named = [(leaf.op, g.value.reshape(leaf.value.shape)) for leaf, g in zip(leaves, grads)]
    # Disambiguate duplicate leaf names within one tape.
    seen: dict[str, int] = {}
    out = []
    for name, arr in named:
        k = seen.get(name, 0)
        seen[name] = k + 1
        out.append((name if k == 0 else f"{name}_{k}", arr))
    return ParamVector.from_blocks(out)


def grad_values(tape: Tape, loss: Node, wrt: Sequence[Node]) -> list[Array]:
    """Plain-array gradients for the given nodes."""
    return [g.value.reshape(w.value.shape) for g, w in zip(tape.gradients(loss, wrt), wrt)]


def finite_difference(
    loss_fn: Callable[[ParamVector], float], params: ParamVector, eps: float
) -> ParamVector:
    """Central-difference gradient estimate, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = params.values
    grad = np.zeros_like(base)
    for j in range(base.size):
        bumped = base.copy()
        bumped[j] = base[j] + eps
        f_plus = float(loss_fn(params.like(bumped)))
        bumped[j] = base[j] - eps
        f_minus = float(loss_fn(params.like(bumped)))
        grad[j] = (f_plus - f_minus) / (2.0 * eps)
    return params.like(grad)
