"""Computation graph over dense float64 tensors.

A :class:`Graph` is an append-only list of :class:`Node` objects in
topological order. Nodes are hash-consed, so building the same expression
twice yields the same node id. :class:`Ref` is a thin handle with operator
overloading for building expressions.

Broadcasting is explicit: elementwise binary ops require equal shapes and
the builder inserts ``Broadcast`` nodes for the only two permitted cases,
scalar-to-tensor and trailing-axis (the source shape is a suffix of the
target shape). Anything else raises :class:`ShapeError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

OPS = frozenset({
    "Var", "Const", "Add", "Sub", "Neg", "MulElem", "MatMul", "SumAll",
    "SumAxis", "Broadcast", "PowConst", "Square", "Tanh", "Relu", "IRelu",
    "Softplus", "ShiftedSoftplus", "Silu", "Heaviside", "Reciprocal", "Sqrt",
})

Shape = tuple[int, ...]


class GraphError(Exception):
    """Base class for graph construction and evaluation errors."""


class ShapeError(GraphError, ValueError):
    pass


class BindingError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NonFiniteError(GraphError, FloatingPointError):
    """Raised when a node evaluates to inf or nan."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value produced by node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    shape: Shape
    attrs: tuple[tuple[str, Any], ...] = ()

    def attr(self, key: str, default: Any = None) -> Any:
        for k, v in self.attrs:
            if k == key:
                return v
        return default


def _as_shape(shape: Iterable[int]) -> Shape:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    return shape


def _matmul_shape(a: Shape, b: Shape, trans_a: bool, trans_b: bool) -> Shape:
    if len(a) == 2 and len(b) == 2:
        m, k = (a[1], a[0]) if trans_a else a
        k2, n = (b[1], b[0]) if trans_b else b
        if k != k2:
            raise ShapeError(f"MatMul inner dims differ: {a} x {b}")
        return (m, n)
    if len(a) == 2 and len(b) == 1:
        if trans_b:
            raise ShapeError("MatMul: cannot transpose a vector")
        m, k = (a[1], a[0]) if trans_a else a
        if k != b[0]:
            raise ShapeError(f"MatMul inner dims differ: {a} x {b}")
        return (m,)
    if len(a) == 1 and len(b) == 1:
        if trans_a or trans_b:
            raise ShapeError("MatMul: cannot transpose a vector")
        return (a[0], b[0])  # outer product
    raise ShapeError(f"MatMul unsupported operand ranks: {a} x {b}")


class Graph:
    """Differentiable computation DAG.

    Variables and outputs are addressed by name. Transformations such as
    :func:`dctrain.autodiff.grad` copy the graph before extending it, so a
    finished graph is never mutated behind a caller's back.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.variables: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        self.consts: dict[int, np.ndarray] = {}
        self._cse: dict[tuple, int] = {}
        self._plans: dict[tuple[str, ...], list[Node]] = {}

    # -- bookkeeping -------------------------------------------------------

    def copy(self) -> "Graph":
        g = Graph()
        g.nodes = list(self.nodes)
        g.variables = dict(self.variables)
        g.outputs = dict(self.outputs)
        g.consts = dict(self.consts)
        g._cse = dict(self._cse)
        return g

    def __len__(self) -> int:
        return len(self.nodes)

    def ref(self, key: int | str) -> "Ref":
        """Handle for a node id, output name or variable name."""
        if isinstance(key, str):
            if key in self.outputs:
                key = self.outputs[key]
            elif key in self.variables:
                key = self.variables[key]
            else:
                raise GraphError(f"no output or variable named {key!r}")
        if not 0 <= key < len(self.nodes):
            raise GraphError(f"node {key} does not exist")
        return Ref(self, key)

    def shape_of(self, node_id: int) -> Shape:
        return self.nodes[node_id].shape

    def output(self, name: str, ref: "Ref") -> "Ref":
        if name in self.outputs and self.outputs[name] != ref.id:
            raise GraphError(f"output {name!r} already defined")
        self._check_ref(ref)
        self.outputs[name] = ref.id
        self._plans.clear()
        return ref

    def _check_ref(self, ref: "Ref") -> None:
        if ref.graph is not self:
            raise GraphError("reference belongs to a different graph")

    def _add(self, op: str, inputs: Sequence[int], shape: Shape,
             attrs: tuple[tuple[str, Any], ...] = (), key: tuple | None = None) -> "Ref":
        if key is None:
            key = (op, tuple(inputs), attrs)
        hit = self._cse.get(key)
        if hit is not None:
            return Ref(self, hit)
        node = Node(len(self.nodes), op, tuple(inputs), shape, attrs)
        self.nodes.append(node)
        self._cse[key] = node.id
        self._plans.clear()
        return Ref(self, node.id)

    # -- leaves ------------------------------------------------------------

    def var(self, name: str, shape: Iterable[int] = ()) -> "Ref":
        shape = _as_shape(shape)
        if name in self.variables:
            existing = self.nodes[self.variables[name]]
            if existing.shape != shape:
                raise ShapeError(f"variable {name!r} redeclared with shape {shape}")
            return Ref(self, existing.id)
        ref = self._add("Var", (), shape, (("name", name),))
        self.variables[name] = ref.id
        return ref

    def const(self, value: Any, shape: Iterable[int] | None = None) -> "Ref":
        arr = np.array(value, dtype=np.float64)
        if shape is not None:
            arr = np.broadcast_to(arr, _as_shape(shape)).copy()
        _as_shape(arr.shape)
        arr.setflags(write=False)
        key = ("Const", arr.shape, arr.tobytes())
        ref = self._add("Const", (), arr.shape, key=key)
        self.consts.setdefault(ref.id, arr)
        return ref

    def zeros(self, shape: Iterable[int]) -> "Ref":
        return self.const(0.0, tuple(shape))

    def const_value(self, ref: "Ref") -> np.ndarray | None:
        return self.consts.get(ref.id)

    def _is_const_fill(self, ref: "Ref", fill: float) -> bool:
        v = self.consts.get(ref.id)
        if v is None:
            node = self.nodes[ref.id]
            if node.op == "Broadcast":
                v = self.consts.get(node.inputs[0])
            if v is None:
                return False
        return bool(np.all(v == fill))

    def is_zero(self, ref: "Ref") -> bool:
        return self._is_const_fill(ref, 0.0)

    def is_one(self, ref: "Ref") -> bool:
        return self._is_const_fill(ref, 1.0)

    # -- shape plumbing ----------------------------------------------------

    def broadcast(self, x: "Ref", shape: Iterable[int]) -> "Ref":
        self._check_ref(x)
        shape = _as_shape(shape)
        src = x.shape
        if src == shape:
            return x
        if src != () and (len(src) > len(shape) or shape[len(shape) - len(src):] != src):
            raise ShapeError(f"cannot broadcast {src} to {shape}: only scalar or trailing-axis broadcasts")
        if self.is_zero(x):
            return self.zeros(shape)
        return self._add("Broadcast", (x.id,), shape, (("shape", shape),))

    def _coerce(self, a: Any, b: Any) -> tuple["Ref", "Ref"]:
        if not isinstance(a, Ref):
            a = self.const(a)
        if not isinstance(b, Ref):
            b = self.const(b)
        self._check_ref(a)
        self._check_ref(b)
        if a.shape == b.shape:
            return a, b
        if len(a.shape) >= len(b.shape):
            return a, self.broadcast(b, a.shape)
        return self.broadcast(a, b.shape), b

    # -- arithmetic --------------------------------------------------------

    def add(self, a: Any, b: Any) -> "Ref":
        a, b = self._coerce(a, b)
        if self.is_zero(a):
            return b
        if self.is_zero(b):
            return a
        if b.id < a.id:  # commutative: canonical order improves sharing
            a, b = b, a
        return self._add("Add", (a.id, b.id), a.shape)

    def sub(self, a: Any, b: Any) -> "Ref":
        a, b = self._coerce(a, b)
        if self.is_zero(b):
            return a
        if self.is_zero(a):
            return self.neg(b)
        return self._add("Sub", (a.id, b.id), a.shape)

    def neg(self, x: "Ref") -> "Ref":
        self._check_ref(x)
        if self.is_zero(x):
            return x
        node = self.nodes[x.id]
        if node.op == "Neg":
            return Ref(self, node.inputs[0])
        return self._add("Neg", (x.id,), x.shape)

    def mul(self, a: Any, b: Any) -> "Ref":
        a, b = self._coerce(a, b)
        if self.is_zero(a) or self.is_zero(b):
            return self.zeros(a.shape)
        if self.is_one(a):
            return b
        if self.is_one(b):
            return a
        if b.id < a.id:
            a, b = b, a
        return self._add("MulElem", (a.id, b.id), a.shape)

    def div(self, a: Any, b: Any) -> "Ref":
        a, b = self._coerce(a, b)
        return self.mul(a, self.reciprocal(b))

    def matmul(self, a: "Ref", b: "Ref", trans_a: bool = False, trans_b: bool = False) -> "Ref":
        self._check_ref(a)
        self._check_ref(b)
        shape = _matmul_shape(a.shape, b.shape, trans_a, trans_b)
        if self.is_zero(a) or self.is_zero(b):
            return self.zeros(shape)
        attrs = (("trans_a", bool(trans_a)), ("trans_b", bool(trans_b)))
        return self._add("MatMul", (a.id, b.id), shape, attrs)

    def sum(self, x: "Ref") -> "Ref":
        self._check_ref(x)
        if x.shape == ():
            return x
        if self.is_zero(x):
            return self.zeros(())
        return self._add("SumAll", (x.id,), ())

    def sum_axis(self, x: "Ref") -> "Ref":
        """Sum over the leading axis."""
        self._check_ref(x)
        if len(x.shape) < 1:
            raise ShapeError("SumAxis needs at least one axis")
        shape = x.shape[1:]
        if shape == ():
            return self.sum(x)
        if self.is_zero(x):
            return self.zeros(shape)
        return self._add("SumAxis", (x.id,), shape, (("axis", 0),))

    def mean(self, x: "Ref") -> "Ref":
        n = int(np.prod(x.shape)) if x.shape else 1
        return self.mul(self.sum(x), 1.0 / n)

    def pow(self, x: "Ref", p: float) -> "Ref":
        self._check_ref(x)
        p = float(p)
        if p == 1.0:
            return x
        if p == 0.0:
            return self.const(1.0, x.shape)
        if p == 2.0:
            return self.square(x)
        return self._add("PowConst", (x.id,), x.shape, (("p", p),))

    def _unary(self, op: str, x: "Ref") -> "Ref":
        self._check_ref(x)
        return self._add(op, (x.id,), x.shape)

    def square(self, x: "Ref") -> "Ref":
        return self._unary("Square", x)

    def tanh(self, x: "Ref") -> "Ref":
        return self._unary("Tanh", x)

    def relu(self, x: "Ref") -> "Ref":
        return self._unary("Relu", x)

    def irelu(self, x: "Ref") -> "Ref":
        return self._unary("IRelu", x)

    def softplus(self, x: "Ref") -> "Ref":
        return self._unary("Softplus", x)

    def shifted_softplus(self, x: "Ref") -> "Ref":
        return self._unary("ShiftedSoftplus", x)

    def silu(self, x: "Ref") -> "Ref":
        return self._unary("Silu", x)

    def heaviside(self, x: "Ref") -> "Ref":
        return self._unary("Heaviside", x)

    def reciprocal(self, x: "Ref") -> "Ref":
        return self._unary("Reciprocal", x)

    def sqrt(self, x: "Ref") -> "Ref":
        return self._unary("Sqrt", x)

    def sigmoid(self, x: "Ref") -> "Ref":
        # 0.5 * (1 + tanh(x / 2)); keeps sigmoid inside the closed op set
        return self.add(0.5, self.mul(0.5, self.tanh(self.mul(0.5, x))))

    # -- queries -----------------------------------------------------------

    def ancestors(self, roots: Iterable[int]) -> set[int]:
        seen: set[int] = set()
        stack = list(roots)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].inputs)
        return seen

    def plan(self, names: tuple[str, ...]) -> list[Node]:
        """Nodes needed for the named outputs, in topological order (cached)."""
        plan = self._plans.get(names)
        if plan is None:
            missing = [n for n in names if n not in self.outputs]
            if missing:
                raise GraphError(f"unknown outputs: {missing}")
            need = self.ancestors(self.outputs[n] for n in names)
            plan = [node for node in self.nodes if node.id in need]
            self._plans[names] = plan
        return plan

    def op_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for node in self.nodes:
            hist[node.op] = hist.get(node.op, 0) + 1
        return hist


@dataclass(frozen=True, eq=False)
class Ref:
    """Handle to a node inside a specific graph."""

    graph: Graph = field(repr=False)
    id: int

    @property
    def shape(self) -> Shape:
        return self.graph.nodes[self.id].shape

    @property
    def op(self) -> str:
        return self.graph.nodes[self.id].op

    def __add__(self, other: Any) -> "Ref":
        return self.graph.add(self, other)

    def __radd__(self, other: Any) -> "Ref":
        return self.graph.add(other, self)

    def __sub__(self, other: Any) -> "Ref":
        return self.graph.sub(self, other)

    def __rsub__(self, other: Any) -> "Ref":
        return self.graph.sub(other, self)

    def __mul__(self, other: Any) -> "Ref":
        return self.graph.mul(self, other)

    def __rmul__(self, other: Any) -> "Ref":
        return self.graph.mul(other, self)

    def __truediv__(self, other: Any) -> "Ref":
        return self.graph.div(self, other)

    def __rtruediv__(self, other: Any) -> "Ref":
        return self.graph.div(other, self)

    def __neg__(self) -> "Ref":
        return self.graph.neg(self)

    def __matmul__(self, other: "Ref") -> "Ref":
        return self.graph.matmul(self, other)

    def __pow__(self, p: float) -> "Ref":
        return self.graph.pow(self, p)
