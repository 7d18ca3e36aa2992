"""JSON debug dump of a graph.

Layout: ``{"nodes": [{id, op, inputs, shape, attrs?, value?}], "variables":
{name: id}, "outputs": {name: id}}``. Floats are written with ``repr`` so the
round trip is exact.
"""
from __future__ import annotations

import json
from typing import Any

import numpy as np

from .graph import OPS, Graph, GraphError, Node


def _encode_attr(v: Any) -> Any:
    return list(v) if isinstance(v, tuple) else v


def to_dict(graph: Graph) -> dict:
    nodes = []
    for n in graph.nodes:
        rec: dict[str, Any] = {"id": n.id, "op": n.op, "inputs": list(n.inputs), "shape": list(n.shape)}
        if n.attrs:
            rec["attrs"] = {k: _encode_attr(v) for k, v in n.attrs}
        if n.op == "Const":
            rec["value"] = graph.consts[n.id].reshape(-1).tolist()
        nodes.append(rec)
    return {"nodes": nodes, "variables": dict(graph.variables), "outputs": dict(graph.outputs)}


def from_dict(data: dict) -> Graph:
    g = Graph()
    for rec in data["nodes"]:
        op = rec["op"]
        if op not in OPS:
            raise GraphError(f"unknown op {op!r}")
        if rec["id"] != len(g.nodes) or any(i >= rec["id"] for i in rec["inputs"]):
            raise GraphError(f"node {rec['id']} out of topological order")
        shape = tuple(rec["shape"])
        attrs = tuple((k, tuple(v) if isinstance(v, list) else v) for k, v in rec.get("attrs", {}).items())
        node = Node(rec["id"], op, tuple(rec["inputs"]), shape, attrs)
        if op == "Const":
            arr = np.array(rec["value"], dtype=np.float64).reshape(shape)
            arr.setflags(write=False)
            g.consts[node.id] = arr
            key: tuple = ("Const", shape, arr.tobytes())
        else:
            key = (op, node.inputs, attrs)
        g.nodes.append(node)
        g._cse.setdefault(key, node.id)
    g.variables = {k: int(v) for k, v in data["variables"].items()}
    g.outputs = {k: int(v) for k, v in data["outputs"].items()}
    return g


def dumps(graph: Graph) -> str:
    return json.dumps(to_dict(graph), sort_keys=True)


def loads(text: str) -> Graph:
    return from_dict(json.loads(text))
