"""Forward evaluation of a :class:`Graph` on numpy arrays."""
from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .graph import BindingError, Graph, GraphError, Node, NonFiniteError, ShapeError

_LN2 = float(np.log(2.0))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _matmul(node: Node, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ta, tb = node.attr("trans_a", False), node.attr("trans_b", False)
    if a.ndim == 1 and b.ndim == 1:
        return np.multiply.outer(a, b)
    return (a.T if ta else a) @ (b.T if tb else b)


def _sum_all(node: Node, x: np.ndarray) -> np.ndarray:
    return np.asarray(np.sum(x))


# op name -> kernel(node, *input_values)
KERNELS: dict[str, Callable[..., np.ndarray]] = {
    "Add": lambda n, a, b: a + b,
    "Sub": lambda n, a, b: a - b,
    "Neg": lambda n, a: -a,
    "MulElem": lambda n, a, b: a * b,
    "MatMul": _matmul,
    "SumAll": _sum_all,
    "SumAxis": lambda n, x: x.sum(axis=0),
    "Broadcast": lambda n, x: np.broadcast_to(x, n.shape),
    "PowConst": lambda n, x: np.power(x, n.attr("p")),
    "Square": lambda n, x: x * x,
    "Tanh": lambda n, x: np.tanh(x),
    "Relu": lambda n, x: np.maximum(x, 0.0),
    "IRelu": lambda n, x: 0.5 * np.square(np.maximum(x, 0.0)),
    "Softplus": lambda n, x: np.logaddexp(0.0, x),
    "ShiftedSoftplus": lambda n, x: np.logaddexp(0.0, x) - _LN2,
    "Silu": lambda n, x: x * _sigmoid(x),
    "Heaviside": lambda n, x: (x > 0.0).astype(np.float64),
    "Reciprocal": lambda n, x: 1.0 / x,
    "Sqrt": lambda n, x: np.sqrt(x),
}


def evaluate(graph: Graph, bindings: Mapping[str, np.ndarray],
             outputs: Iterable[str] | None = None, *,
             check_finite: bool = True) -> dict[str, np.ndarray]:
    """Evaluate named outputs of ``graph``.

    Every node on the path to the requested outputs is computed exactly
    once. Only variables on that path need bindings. With
    ``check_finite`` any inf/nan raises :class:`NonFiniteError` naming the
    first offending node.
    """
    names = tuple(graph.outputs) if outputs is None else tuple(outputs)
    plan = graph.plan(names)
    values: dict[int, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for node in plan:
            op = node.op
            if op == "Var":
                name = node.attr("name")
                if name not in bindings:
                    raise BindingError(f"missing binding for variable {name!r}")
                val = np.asarray(bindings[name], dtype=np.float64)
                if val.shape != node.shape:
                    raise ShapeError(f"binding {name!r} has shape {val.shape}, expected {node.shape}")
            elif op == "Const":
                val = graph.consts[node.id]
            else:
                kernel = KERNELS.get(op)
                if kernel is None:
                    raise GraphError(f"unknown op {op!r} at node {node.id}")
                val = kernel(node, *(values[i] for i in node.inputs))
            if check_finite and not np.isfinite(val).all():
                raise NonFiniteError(node.id, op)
            values[node.id] = val
    return {name: np.array(values[graph.outputs[name]]) for name in names}


# alias under the operation's conventional name (``eval`` is a builtin)
eval_graph = evaluate
