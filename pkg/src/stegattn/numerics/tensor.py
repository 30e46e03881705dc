"""Tensor container and reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`.ops` return new
tensors that remember their inputs, the name of the operation and whatever
the backward rule needs. :func:`grad` walks that record backwards.

Backward rules live in the module-level registry ``BACKWARD`` keyed by
operation name and are looked up when :func:`grad` runs, so a rule can be
swapped out (the gradient checker's negative-control test relies on this).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError, UsageError

DEFAULT_DTYPE = np.float32

# op name -> rule(grad_out, node) -> tuple of grads aligned with node.parents
BACKWARD: dict[str, Callable] = {}


def backward_rule(name: str):
    def register(fn):
        BACKWARD[name] = fn
        return fn
    return register


class Tensor:
    """A numpy array plus the record of how it was computed.

    Activations and images are 4-axis ``(n, c, h, w)`` arrays; the dense
    layers of channel attention work on 2-axis matrices and losses are
    0-axis scalars, so the container itself does not fix the rank.
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "saved", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.saved: dict = {}
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, op: str, parents: Sequence[Tensor], **saved) -> Tensor:
    """Wrap an op result; the graph is recorded only if some input needs it."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = tuple(parents)
        out.saved = saved
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor], grad_output=None) -> list[np.ndarray]:
    """Reverse-mode derivative of ``output`` with respect to each of ``wrt``.

    ``output`` must be a scalar unless ``grad_output`` (an upstream gradient
    of the same shape) is given. A leaf parameter the output does not depend
    on gets an all-zero gradient; asking for a tensor that does not track
    gradients, or an intermediate from another graph, raises
    :class:`UsageError`.
    """
    wrt = list(wrt)
    if grad_output is None:
        if output.data.size != 1:
            raise UsageError("grad of a non-scalar output needs grad_output")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(grad_output, dtype=output.dtype)
        if seed.shape != output.shape:
            raise ShapeError(f"grad_output shape {seed.shape} != output shape {output.shape}")

    for w in wrt:
        if not isinstance(w, Tensor) or not w.requires_grad:
            raise UsageError("requested gradient of a value that does not track gradients")

    order = _topo_order(output) if output.requires_grad else []
    in_graph = {id(n) for n in order}
    for w in wrt:
        if id(w) not in in_graph and not w.is_leaf:
            raise UsageError("requested gradient of an intermediate that is not in this graph")

    wanted = {id(w) for w in wrt}
    grads: dict[int, np.ndarray] = {}
    if order:
        grads[id(output)] = seed
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.is_leaf:
            continue
        if id(node) not in wanted:
            del grads[id(node)]
        rule = BACKWARD[node.op]
        parent_grads = rule(g, node)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"backward rule for {node.op} produced shape {pg.shape}, "
                                 f"expected {p.shape}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads[id(w)] if id(w) in grads else np.zeros_like(w.data) for w in wrt]
