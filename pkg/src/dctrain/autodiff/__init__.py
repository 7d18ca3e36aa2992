"""Higher-order differentiable computation graphs."""
from .checks import check_grad, finite_difference, relative_error
from .graph import (OPS, BindingError, Graph, GraphError, Node, NonFiniteError,
                    Ref, ShapeError)
from .interp import eval_graph, evaluate
from .reverse import grad, gradients
from .serialize import dumps, loads

__all__ = [
    "OPS", "BindingError", "Graph", "GraphError", "Node", "NonFiniteError", "Ref",
    "ShapeError", "check_grad", "dumps", "eval_graph", "evaluate", "finite_difference",
    "grad", "gradients", "loads", "relative_error",
]
