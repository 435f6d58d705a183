"""A small directed acyclic graph of layers, and its binary file format.

File layout (all little-endian)::

    magic      8 bytes   b"NCRYNET1"
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON: nodes, tensor table, metadata
    payload    float64 values of every tensor in table order
    checksum   32 bytes, SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .layers import Input, Layer, layer_from_spec
from ..errors import ShapeError

MAGIC = b"NCRYNET1"


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: tuple


class ModelGraph:
    def __init__(self, meta: dict | None = None):
        self.nodes: dict[str, Node] = {}
        self.meta = dict(meta or {})
        self.output = None
        self._requires_grad: dict[str, bool] = {}

    def add(self, name: str, layer: Layer, inputs=()) -> str:
        if name in self.nodes:
            raise ValueError(f"duplicate node name {name!r}")
        for src in inputs:
            if src not in self.nodes:
                raise ValueError(f"node {name!r} reads unknown node {src!r}")
        self.nodes[name] = Node(name, layer, tuple(inputs))
        self.output = name
        return name

    def _route_gradients(self) -> None:
        # a node needs a backward pass only if it or an ancestor has parameters
        self._requires_grad = {}
        for node in self.nodes.values():
            needs_in = any(self._requires_grad[s] for s in node.inputs)
            self._requires_grad[node.name] = bool(node.layer.params) or needs_in
            node.layer.need_input_grad = needs_in

    @property
    def input_node(self) -> Node:
        return next(n for n in self.nodes.values() if isinstance(n.layer, Input))

    def infer_shapes(self) -> dict:
        """Per-node output shapes (without batch axis), no data needed."""
        shapes = {}
        for node in self.nodes.values():
            in_shapes = [shapes[s] for s in node.inputs]
            try:
                shapes[node.name] = node.layer.output_shape(in_shapes)
            except ShapeError as exc:
                detail = ", ".join(f"{s}: {shapes[s]}" for s in node.inputs)
                raise ShapeError(f"at node {node.name!r} ({detail}): {exc}") from None
        return shapes

    def initialize(self, rng: np.random.Generator) -> None:
        shapes = self.infer_shapes()
        for node in self.nodes.values():
            node.layer.init_params([shapes[s] for s in node.inputs], rng)
        self._route_gradients()

    def forward(self, x, training=False, rng=None):
        acts = {}
        for node in self.nodes.values():
            xs = [x] if not node.inputs else [acts[s] for s in node.inputs]
            acts[node.name] = node.layer.forward(xs, training=training, rng=rng)
        return acts[self.output]

    def backward(self, grad) -> None:
        """Back-propagate ``grad`` (d loss / d output) and fill layer grads."""
        if len(self._requires_grad) != len(self.nodes):
            self._route_gradients()
        pending = {self.output: grad}
        for node in reversed(list(self.nodes.values())):
            g = pending.pop(node.name, None)
            if g is None or not self._requires_grad[node.name]:
                continue
            in_grads = node.layer.backward(g)
            for src, dg in zip(node.inputs, in_grads):
                if dg is None or not self._requires_grad[src]:
                    continue
                if src in pending:
                    pending[src] = pending[src] + dg
                else:
                    pending[src] = dg

    def parameters(self) -> dict:
        return {f"{n.name}.{k}": v for n in self.nodes.values() for k, v in n.layer.params.items()}

    def gradients(self) -> dict:
        return {f"{n.name}.{k}": v for n in self.nodes.values() for k, v in n.layer.grads.items()}

    def l2_terms(self):
        """(name, lambda, weights) for every layer with an L2 penalty; biases
        are not penalized."""
        return [(f"{n.name}.W", n.layer.l2, n.layer.params["W"])
                for n in self.nodes.values() if n.layer.l2 > 0 and "W" in n.layer.params]

    @property
    def param_count(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def summary(self) -> str:
        shapes = self.infer_shapes()
        lines = [f"{'node':<14}{'layer':<44}{'output':<16}{'params':>8}"]
        for node in self.nodes.values():
            n = sum(v.size for v in node.layer.params.values())
            lines.append(f"{node.name:<14}{repr(node.layer):<44}"
                         f"{'x'.join(map(str, shapes[node.name])):<16}{n:>8}")
        lines.append(f"total parameters: {self.param_count}")
        return "\n".join(lines)

    # -- serialization ---------------------------------------------------

    def to_bytes(self, optimizer_state: dict | None = None) -> bytes:
        nodes = [{"name": n.name, "kind": n.layer.kind, "inputs": list(n.inputs),
                  "spec": n.layer.spec()} for n in self.nodes.values()]
        tensors = [("param", k, v) for k, v in self.parameters().items()]
        if optimizer_state:
            tensors += [("state", k, v) for k, v in sorted(optimizer_state.items())]
        header = {"nodes": nodes, "meta": self.meta,
                  "tensors": [{"role": r, "name": k, "shape": list(v.shape)} for r, k, v in tensors]}
        hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<I", len(hdr)) + hdr
        body += b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in tensors)
        return body + hashlib.sha256(body).digest()

    def save(self, path, optimizer_state: dict | None = None) -> None:
        data = self.to_bytes(optimizer_state)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    @classmethod
    def from_bytes(cls, data: bytes):
        """Returns (graph, optimizer_state)."""
        if data[:8] != MAGIC:
            raise ValueError("not a model file (bad magic bytes)")
        if hashlib.sha256(data[:-32]).digest() != data[-32:]:
            raise ValueError("model file checksum mismatch")
        (hlen,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12:12 + hlen])
        graph = cls(header["meta"])
        for nd in header["nodes"]:
            graph.add(nd["name"], layer_from_spec(nd["kind"], nd["spec"]), nd["inputs"])
        pos = 12 + hlen
        state = {}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(t["shape"])
            arr = arr.astype(np.float64)
            pos += 8 * count
            if t["role"] == "param":
                node, key = t["name"].rsplit(".", 1)
                graph.nodes[node].layer.params[key] = arr
            else:
                state[t["name"]] = arr
        if pos != len(data) - 32:
            raise ValueError("model file payload length does not match its header")
        graph._route_gradients()
        return graph, state

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
