"""Minimal reverse-mode tape: a Tensor node plus the backward sweep."""

from __future__ import annotations

import numpy as np


class Tensor:
    """n-dimensional array with an optional accumulated gradient.

    Non-leaf tensors remember their parents and a closure mapping the output
    gradient to one gradient per parent (None where the parent needs none).
    """

    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def make_node(values, parents, backward_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=req, parents=tuple(parents) if req else (),
                  backward_fn=backward_fn if req else None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(root: Tensor, grad: np.ndarray) -> None:
    """Propagate `grad` (d loss / d root) to every leaf reachable from root.

    Leaf gradients accumulate into `.grad`; interior buffers are released as
    soon as they have been consumed. Traversal order is fixed by the graph, so
    accumulation is deterministic.
    """
    if not root.requires_grad:
        return
    order = _topo_order(root)
    pending = {id(root): grad}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
