"""Reverse-mode differentiation by source transformation.

Each op's vector-Jacobian product is emitted as new graph nodes built only
from ops in :data:`~dctrain.autodiff.graph.OPS`, so the result of
:func:`grad` is an ordinary graph that can be differentiated again.

Conventions at kinks: ``Relu'(0) = 0`` and ``Heaviside(0) = 0``; the
derivative of ``Heaviside`` is taken to be zero everywhere.
"""
from __future__ import annotations

from typing import Iterable, Sequence

from .graph import Graph, GraphError, Node, Ref, ShapeError


def _vjp(g: Graph, node: Node, gbar: Ref, want: Sequence[bool]) -> list[Ref | None]:
    """Adjoint contributions to each input of ``node`` (None where unwanted)."""
    op = node.op
    ins = [Ref(g, i) for i in node.inputs]
    y = Ref(g, node.id)
    out: list[Ref | None] = [None] * len(ins)

    if op == "Add":
        out = [gbar, gbar]
    elif op == "Sub":
        out = [gbar, g.neg(gbar) if want[1] else None]
    elif op == "Neg":
        out = [g.neg(gbar)]
    elif op == "MulElem":
        a, b = ins
        out = [g.mul(gbar, b) if want[0] else None, g.mul(gbar, a) if want[1] else None]
    elif op == "MatMul":
        a, b = ins
        ta, tb = node.attr("trans_a", False), node.attr("trans_b", False)
        if len(a.shape) == 1 and len(b.shape) == 1:
            # outer product C = a b^T
            if want[0]:
                out[0] = g.matmul(gbar, b)
            if want[1]:
                out[1] = g.matmul(gbar, a, trans_a=True)
        elif len(b.shape) == 1:
            if want[0]:
                out[0] = g.matmul(b, gbar) if ta else g.matmul(gbar, b)
            if want[1]:
                out[1] = g.matmul(a, gbar, trans_a=not ta)
        else:
            if want[0]:
                out[0] = g.matmul(b, gbar, trans_a=tb, trans_b=True) if ta \
                    else g.matmul(gbar, b, trans_b=not tb)
            if want[1]:
                out[1] = g.matmul(gbar, a, trans_a=True, trans_b=ta) if tb \
                    else g.matmul(a, gbar, trans_a=not ta)
    elif op == "SumAll" or op == "SumAxis":
        out = [g.broadcast(gbar, ins[0].shape)]
    elif op == "Broadcast":
        x = ins[0]
        acc = gbar
        if x.shape == ():
            acc = g.sum(acc)
        else:
            while acc.shape != x.shape:
                acc = g.sum_axis(acc)
        out = [acc]
    elif op == "PowConst":
        p = node.attr("p")
        out = [g.mul(gbar, g.mul(p, g.pow(ins[0], p - 1.0)))]
    elif op == "Square":
        out = [g.mul(gbar, g.mul(2.0, ins[0]))]
    elif op == "Tanh":
        out = [g.mul(gbar, g.sub(1.0, g.square(y)))]
    elif op == "Relu":
        out = [g.mul(gbar, g.heaviside(ins[0]))]
    elif op == "IRelu":
        out = [g.mul(gbar, g.relu(ins[0]))]
    elif op in ("Softplus", "ShiftedSoftplus"):
        out = [g.mul(gbar, g.sigmoid(ins[0]))]
    elif op == "Silu":
        x = ins[0]
        th = g.tanh(g.mul(0.5, x))
        s = g.add(0.5, g.mul(0.5, th))
        ds = g.mul(0.25, g.sub(1.0, g.square(th)))
        out = [g.mul(gbar, g.add(s, g.mul(x, ds)))]
    elif op == "Heaviside":
        out = [None]
    elif op == "Reciprocal":
        out = [g.neg(g.mul(gbar, g.square(y)))]
    elif op == "Sqrt":
        out = [g.mul(gbar, g.mul(0.5, g.reciprocal(y)))]
    else:
        raise GraphError(f"no derivative rule for op {op!r}")
    return [o if w else None for o, w in zip(out, want)]


def gradients(graph: Graph, y: Ref, wrt: Sequence[Ref]) -> list[Ref]:
    """Append nodes for ``d y / d w`` for each ``w`` in ``wrt`` to ``graph``.

    This mutates ``graph`` and is meant for use while a graph is still under
    construction (loss builders). Use :func:`grad` on finished graphs.
    """
    if y.shape != ():
        raise ShapeError(f"can only differentiate a scalar node, got shape {y.shape}")
    nodes = graph.nodes
    targets = {w.id for w in wrt}
    # nodes that depend on a target
    depends: set[int] = set()
    for node in nodes[: y.id + 1]:
        if node.id in targets or any(i in depends for i in node.inputs):
            depends.add(node.id)
    relevant = depends & graph.ancestors([y.id])

    adj: dict[int, Ref] = {y.id: graph.const(1.0)}
    for node in reversed(nodes[: y.id + 1]):
        if node.id not in relevant or node.id not in adj or not node.inputs:
            continue
        want = [i in relevant for i in node.inputs]
        for i, contrib in zip(node.inputs, _vjp(graph, node, adj[node.id], want)):
            if contrib is None:
                continue
            adj[i] = graph.add(adj[i], contrib) if i in adj else contrib
    return [adj.get(w.id) or graph.zeros(w.shape) for w in wrt]


def grad(graph: Graph, output: str, wrt: Iterable[str]) -> Graph:
    """Return a new graph with outputs ``"d<output>/d<var>"`` added.

    ``output`` must name a scalar node. The input graph is left untouched;
    the result keeps all of its outputs, so grad can be applied repeatedly.
    """
    wrt = list(wrt)
    if output not in graph.outputs:
        raise GraphError(f"no output named {output!r}")
    missing = [w for w in wrt if w not in graph.variables]
    if missing:
        raise GraphError(f"variables not found: {missing}")
    g = graph.copy()
    y = g.ref(g.outputs[output])
    refs = gradients(g, y, [g.ref(g.variables[w]) for w in wrt])
    for name, r in zip(wrt, refs):
        g.output(f"d{output}/d{name}", r)
    return g
