"""Finite-difference checks for graph gradients."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .graph import Graph
from .interp import evaluate
from .reverse import grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Componentwise ``|a - n| / max(|a|, |n|, 1e-8)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def finite_difference(graph: Graph, output: str, wrt: str,
                      point: Mapping[str, np.ndarray], eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar output w.r.t. every component of ``wrt``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    x0 = base[wrt]
    out = np.empty(x0.shape)
    flat_out = out.reshape(-1)
    for j in range(x0.size):
        x = x0.copy()
        x.reshape(-1)[j] += eps
        fp = evaluate(graph, {**base, wrt: x}, [output])[output]
        x.reshape(-1)[j] = x0.reshape(-1)[j] - eps
        fm = evaluate(graph, {**base, wrt: x}, [output])[output]
        flat_out[j] = (fp - fm) / (2.0 * eps)
    return out


def check_grad(graph: Graph, output: str, wrt: str,
               point: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between the grad graph and central differences."""
    g = grad(graph, output, [wrt])
    analytic = evaluate(g, point, [f"d{output}/d{wrt}"])[f"d{output}/d{wrt}"]
    numeric = finite_difference(graph, output, wrt, point, eps)
    return float(np.max(relative_error(analytic, numeric), initial=0.0))
