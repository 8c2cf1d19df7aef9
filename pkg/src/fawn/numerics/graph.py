"""Tape-based reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Graph` is an append-only list of nodes. Every operation appends one
node holding its output value, the ids of its inputs and a vector-Jacobian
product closure. Because inputs must already exist when a node is appended,
the node list is a topological order and :meth:`Graph.backward` is a single
reverse sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: VJP | None = None
    meta: dict | None = None
    _grad: np.ndarray | None = field(default=None, repr=False)

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zero until something flows in."""
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray):
        self._grad = value

    def accumulate(self, g: np.ndarray):
        g = np.asarray(g, dtype=np.float64).reshape(self.value.shape)
        self._grad = g.copy() if self._grad is None else self._grad + g


class Graph:
    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, op: str = "leaf") -> "Var":
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(Node(op, (), arr))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value) -> "Var":
        return self.leaf(value, op="const")

    def push(self, op: str, inputs: Sequence["Var"], value: np.ndarray, vjp: VJP, meta: dict | None = None) -> "Var":
        ids = tuple(v.id for v in inputs)
        assert all(i < len(self.nodes) for i in ids)
        self.nodes.append(Node(op, ids, np.asarray(value, dtype=np.float64), vjp, meta))
        return Var(self, len(self.nodes) - 1)

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None

    def backward(self, loss: "Var"):
        if loss.graph is not self:
            raise ContractError("loss belongs to a different graph")
        node = self.nodes[loss.id]
        if node.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {node.value.shape}")
        node.grad = np.ones_like(node.value)
        for i in range(loss.id, -1, -1):
            node = self.nodes[i]
            if node.vjp is None or node._grad is None:
                continue
            for src, g in zip(node.inputs, node.vjp(node._grad)):
                if g is not None:
                    self.nodes[src].accumulate(g)


def backward(graph: Graph, loss: "Var"):
    graph.backward(loss)


class Var:
    """Handle to one node of a graph."""

    __slots__ = ("graph", "id")
    __array_priority__ = 100

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.id]

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @property
    def grad(self) -> np.ndarray:
        return self.node.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, op={self.node.op!r}, shape={self.shape})"

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(ops.as_var(self.graph, other), -1.0))

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)
