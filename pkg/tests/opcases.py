"""One small graph per op (and MatMul layout) for the derivative oracle suite."""
from __future__ import annotations

import zlib

import numpy as np

from dctrain.autodiff import OPS, Graph

N = 100
MATMUL_LAYOUTS = ("MatMul[trans_a]", "MatMul[trans_b]", "MatMul[outer]")
CASES = tuple(sorted(OPS)) + MATMUL_LAYOUTS

def away(rng, n, lo=-3.0, hi=3.0, gap=0.05):
    x = rng.uniform(lo, hi, n)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)

def case(name: str) -> tuple[Graph, dict[str, np.ndarray]]:
    """Graph with scalar output "y" exercising ``name`` w.r.t. variable "a", and a point."""
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    g = Graph()
    pt = {}
    def vec(nm, n=N, pos=False, kink=False):
        pt[nm] = rng.uniform(0.5, 2.0, n) if pos else (away(rng, n) if kink else rng.uniform(-2, 2, n))
        return g.var(nm, (n,))
    if name == "Var":
        a = vec("a"); y = g.sum(g.tanh(a))
    elif name == "Const":
        a = vec("a"); scale = rng.uniform(0.5, 1.5, N) * rng.choice([-1.0, 1.0], N)
        y = g.sum(g.tanh(a * g.const(scale)))
    elif name == "Add":
        a = vec("a"); b = vec("b"); y = g.sum(g.tanh(a + b))
    elif name == "Sub":
        a = vec("a"); b = vec("b"); y = g.sum(g.tanh(b - a))
    elif name == "Neg":
        a = vec("a"); y = g.sum(g.tanh(-a))
    elif name == "MulElem":
        a = vec("a"); b = vec("b"); y = g.sum(a * a * b)
    elif name == "MatMul":
        a = g.var("a", (10, 10)); pt["a"] = rng.uniform(-1, 1, (10, 10))
        x = g.var("x", (10,)); pt["x"] = rng.uniform(-1, 1, 10)
        y = g.sum(g.tanh(g.matmul(a, x)))
    elif name == "MatMul[trans_a]":
        a = g.var("a", (10, 10)); pt["a"] = rng.uniform(-1, 1, (10, 10))
        x = g.var("x", (10, 4)); pt["x"] = rng.uniform(-1, 1, (10, 4))
        y = g.sum(g.tanh(g.matmul(a, x, trans_a=True)))
    elif name == "MatMul[trans_b]":
        a = g.var("a", (25, 4)); pt["a"] = rng.uniform(-1, 1, (25, 4))
        w = g.var("w", (3, 4)); pt["w"] = rng.uniform(-1, 1, (3, 4))
        y = g.sum(g.tanh(g.matmul(a, w, trans_b=True)))
    elif name == "MatMul[outer]":
        a = g.var("a", (100,)); pt["a"] = rng.uniform(-1, 1, 100)
        b = g.var("b", (3,)); pt["b"] = rng.uniform(-1, 1, 3)
        y = g.sum(g.tanh(g.matmul(a, b)))
    elif name == "SumAll":
        a = vec("a"); y = g.square(g.sum(g.tanh(a)))
    elif name == "SumAxis":
        a = g.var("a", (10, 10)); pt["a"] = rng.uniform(-2, 2, (10, 10))
        y = g.sum(g.tanh(g.sum_axis(a)))
    elif name == "Broadcast":
        a = g.var("a", (N,)); pt["a"] = rng.uniform(-2, 2, N)
        m = g.var("m", (3, N)); pt["m"] = rng.uniform(-2, 2, (3, N))
        y = g.sum(g.tanh(m * g.broadcast(a, (3, N))))
    elif name == "PowConst":
        a = vec("a", pos=True); y = g.sum(g.pow(a, 2.5))
    elif name == "Square":
        a = vec("a"); y = g.sum(g.square(g.tanh(a)))
    elif name == "Reciprocal":
        a = vec("a", pos=True); y = g.sum(g.reciprocal(a))
    elif name == "Sqrt":
        a = vec("a", pos=True); y = g.sum(g.sqrt(a))
    else:
        kink = name in ("Relu", "IRelu", "Heaviside")
        a = vec("a", kink=kink)
        op = {"Tanh": g.tanh, "Relu": g.relu, "IRelu": g.irelu, "Softplus": g.softplus,
              "ShiftedSoftplus": g.shifted_softplus, "Silu": g.silu, "Heaviside": g.heaviside}[name]
        y = g.sum(op(a))
    g.output("y", y)
    return g, pt
