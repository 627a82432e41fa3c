"""Directed acyclic layer graphs with named parameters and frozen/trainable bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import INFER, Context, Layer, softmax
from . import tensor as T

INPUT = "input"


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: list[str]
    output_shape: tuple
    block: str | None = None


@dataclass
class ParamCount:
    per_node: dict[str, tuple[int, int]]
    blocks: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def trainable(self) -> int:
        return sum(t for t, _ in self.per_node.values())

    @property
    def non_trainable(self) -> int:
        return sum(n for _, n in self.per_node.values())

    @property
    def total(self) -> int:
        return self.trainable + self.non_trainable

    def block_total(self, block: str) -> int:
        t, n = self.blocks[block]
        return t + n


class Model:
    """An ordered layer graph whose last node emits the two class logits.

    Nodes read from earlier nodes by name (``"input"`` is the batch itself), so
    skip connections and attention branches are just nodes with two inputs.
    ``forward`` returns logits; ``predict_proba`` applies the softmax output.
    """

    def __init__(self, name: str, input_shape, scale: float = 1.0, seed: int = 0,
                 dtype=T.DEFAULT_DTYPE, metadata: dict | None = None):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.scale = float(scale)
        self.dtype = np.dtype(dtype)
        self.metadata = dict(metadata or {})
        self.nodes: list[Node] = []
        self._by_name: dict[str, Node] = {}
        self._init_rng = np.random.default_rng(seed)
        self._needs_grad: dict[str, bool] | None = None

    def shape_of(self, name: str) -> tuple:
        if name == INPUT:
            return self.input_shape
        return self._by_name[name].output_shape

    @property
    def output(self) -> str:
        return self.nodes[-1].name if self.nodes else INPUT

    def add(self, name: str, layer: Layer, inputs: list[str] | str | None = None,
            block: str | None = None) -> str:
        if name in self._by_name or name == INPUT:
            raise ConfigError(f"duplicate node name {name!r}")
        if inputs is None:
            inputs = [self.output]
        elif isinstance(inputs, str):
            inputs = [inputs]
        shapes = [self.shape_of(i) for i in inputs]
        if layer.n_inputs > 0 and len(shapes) != layer.n_inputs:
            raise ShapeError(f"{name}: {layer.kind} takes {layer.n_inputs} inputs, got {len(shapes)}")
        out_shape = layer.output_shape(*shapes)
        layer.build(*shapes, rng=self._init_rng, dtype=self.dtype)
        layer.stream = len(self.nodes)
        node = Node(name, layer, list(inputs), tuple(out_shape), block)
        self.nodes.append(node)
        self._by_name[name] = node
        self._needs_grad = None
        return name

    def __getitem__(self, name: str) -> Node:
        return self._by_name[name]

    def freeze(self, names=None) -> None:
        """Mark nodes (all when ``names`` is None) as non-trainable."""
        for node in self.nodes:
            if names is None or node.name in names:
                node.layer.trainable = False
        self._needs_grad = None

    def astype(self, dtype) -> "Model":
        self.dtype = np.dtype(dtype)
        for node in self.nodes:
            node.layer.astype(self.dtype)
        return self

    # -- execution -------------------------------------------------------

    def _compute_needs_grad(self) -> dict[str, bool]:
        needs = {INPUT: False}
        for node in self.nodes:
            own = node.layer.trainable and bool(node.layer.params)
            needs[node.name] = own or any(needs[i] for i in node.inputs)
        return needs

    def forward(self, x: np.ndarray, ctx: Context = INFER) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name}: expected [B, {', '.join(map(str, self.input_shape))}], got {x.shape}")
        if self._needs_grad is None:
            self._needs_grad = self._compute_needs_grad()
        values = {INPUT: x}
        remaining = {}
        for node in self.nodes:
            for i in node.inputs:
                remaining[i] = remaining.get(i, 0) + 1
        for node in self.nodes:
            out = node.layer.forward(*(values[i] for i in node.inputs), ctx=ctx)
            if not (ctx.train and self._needs_grad[node.name]):
                node.layer._tape = None
            values[node.name] = out
            for i in node.inputs:
                remaining[i] -= 1
                if remaining[i] == 0 and i != INPUT:
                    del values[i]
        return values[self.output]

    def backward(self, grad: np.ndarray) -> None:
        """Backpropagate ``d loss / d logits``; parameter gradients land in each layer's ``grads``."""
        if self._needs_grad is None:
            raise ShapeError("backward called before forward")
        grads: dict[str, np.ndarray] = {self.output: grad}
        for node in reversed(self.nodes):
            g = grads.pop(node.name, None)
            if g is None or not self._needs_grad[node.name]:
                node.layer._tape = None
                continue
            input_grads = node.layer.backward(g)
            for name, gi in zip(node.inputs, input_grads):
                if not self._needs_grad[name]:
                    continue
                grads[name] = grads[name] + gi if name in grads else gi

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x, INFER))

    # -- parameters ------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Layer, str]]:
        for node in self.nodes:
            for pname in node.layer.params:
                yield f"{node.name}/{pname}", node.layer, pname

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        return {key: layer.params[p] for key, layer, p in self.named_parameters() if layer.trainable}

    def gradients(self) -> dict[str, np.ndarray]:
        return {key: layer.grads[p] for key, layer, p in self.named_parameters()
                if layer.trainable and p in layer.grads}

    def tensors(self) -> dict[str, np.ndarray]:
        """Every parameter and state tensor, keyed ``node/name`` in graph order."""
        out = {}
        for node in self.nodes:
            for d in (node.layer.params, node.layer.state):
                for k, v in d.items():
                    out[f"{node.name}/{k}"] = v
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for node in self.nodes:
            for d in (node.layer.params, node.layer.state):
                for k in d:
                    key = f"{node.name}/{k}"
                    if key not in tensors:
                        raise ConfigError(f"missing tensor {key!r}")
                    if tensors[key].shape != d[k].shape:
                        raise ShapeError(f"{key}: stored shape {tensors[key].shape} != model shape {d[k].shape}")
                    d[k] = np.array(tensors[key], dtype=tensors[key].dtype)
        self.dtype = next(iter(tensors.values())).dtype if tensors else self.dtype

    def count_params(self) -> ParamCount:
        per_node = {n.name: n.layer.param_count() for n in self.nodes}
        blocks: dict[str, tuple[int, int]] = {}
        for n in self.nodes:
            if n.block is not None:
                t, nt = blocks.get(n.block, (0, 0))
                dt, dn = per_node[n.name]
                blocks[n.block] = (t + dt, nt + dn)
        return ParamCount(per_node, blocks)

    def summary(self) -> str:
        counts = self.count_params()
        rows = [("node", "kind", "output shape", "status", "params")]
        for n in self.nodes:
            t, nt = counts.per_node[n.name]
            status = "trainable" if n.layer.trainable else "frozen"
            rows.append((n.name, n.layer.kind, "x".join(map(str, n.output_shape)), status, f"{t + nt:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = [f"Model: {self.name} (input {'x'.join(map(str, self.input_shape))}, scale {self.scale:g})"]
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
            if i == 0:
                lines.append("-" * (sum(widths) + 8))
        lines.append("-" * (sum(widths) + 8))
        lines.append(f"output activation: {self.metadata.get('output_activation', 'softmax')}")
        lines.append(f"Total params: {counts.total:,}")
        lines.append(f"Trainable params: {counts.trainable:,}")
        lines.append(f"Non-trainable params: {counts.non_trainable:,}")
        return "\n".join(lines)
