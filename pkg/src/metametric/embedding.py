"""Feed-forward embedding network and named parameter collections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Graph, Node


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int = 64
    hidden_dims: tuple[int, ...] = (32,)
    embed_dim: int = 16
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.embed_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.embed_dim)
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, (fan_in, fan_out) in enumerate(self.layer_dims):
            shapes[f"layer{i}/weight"] = (fan_in, fan_out)
            shapes[f"layer{i}/bias"] = (fan_out,)
        return shapes


@dataclass
class ParamSet:
    """Ordered name -> array (or graph node) mapping.

    Iteration order is the insertion order, which :func:`init_params` fixes
    per architecture; elementwise operations between ParamSets rely on it.
    """

    entries: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def items(self):
        return self.entries.items()

    def values(self):
        return self.entries.values()

    def shapes(self) -> dict[str, tuple]:
        return {k: tuple(np.shape(v) if not isinstance(v, Node) else v.shape)
                for k, v in self.entries.items()}

    def total_len(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes().values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.entries.values()]) if self.entries else np.zeros(0)

    def unflatten(self, vec) -> "ParamSet":
        """New ParamSet with this one's layout; ``vec`` may be an array or a 1-d node."""
        out, pos = {}, 0
        for name, shape in self.shapes().items():
            n = int(np.prod(shape))
            if isinstance(vec, Node):
                out[name] = vec.graph.take(vec, pos, pos + n, shape)
            else:
                out[name] = np.asarray(vec[pos:pos + n], dtype=np.float64).reshape(shape)
            pos += n
        if pos != (vec.shape[0] if isinstance(vec, Node) else len(vec)):
            raise ValueError(f"vector length does not match ParamSet size {pos}")
        return ParamSet(out)

    def map(self, fn) -> "ParamSet":
        return ParamSet({k: fn(v) for k, v in self.entries.items()})

    def copy(self) -> "ParamSet":
        return ParamSet({k: np.array(v, dtype=np.float64) for k, v in self.entries.items()})

    def same_layout(self, other: "ParamSet") -> bool:
        return list(self.shapes().items()) == list(other.shapes().items())

    def equals(self, other: "ParamSet") -> bool:
        """Bit-exact equality of names, order, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(np.asarray(self[k]), np.asarray(other[k])) for k in self)

    @staticmethod
    def zeros_like(other: "ParamSet") -> "ParamSet":
        return ParamSet({k: np.zeros(s) for k, s in other.shapes().items()})

    @staticmethod
    def full_like(other: "ParamSet", value: float) -> "ParamSet":
        return ParamSet({k: np.full(s, float(value)) for k, s in other.shapes().items()})


def init_params(arch: ArchConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    entries = {}
    for i, (fan_in, fan_out) in enumerate(arch.layer_dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        entries[f"layer{i}/weight"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        entries[f"layer{i}/bias"] = np.zeros(fan_out)
    return ParamSet(entries)


def as_parameters(graph: Graph, params: ParamSet, prefix: str = "") -> tuple[ParamSet, dict]:
    """Declare graph parameter nodes for ``params``; returns (node ParamSet, bindings)."""
    nodes, bindings = {}, {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        node = graph.parameter(value.shape, name=prefix + name)
        nodes[name] = node
        bindings[node.id] = value
    return ParamSet(nodes), bindings


def embed(params: ParamSet, images, arch: ArchConfig, train: bool = False,
          rng: np.random.Generator | None = None) -> Node:
    """Embed a batch of flattened images (rows) with node-valued ``params``.

    Every layer is affine followed by relu. In train mode, inverted dropout
    follows each hidden relu; the final embedding is never dropped.
    """
    first = next(iter(params.values()))
    if not isinstance(first, Node):
        raise TypeError("embed expects graph-node parameters; see embed_values for arrays")
    g = first.graph
    images = images if isinstance(images, Node) else np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != arch.input_dim:
        raise ValueError(f"expected images of shape (n, {arch.input_dim}), got {images.shape}")
    h = images if isinstance(images, Node) else g.const(images)
    n_layers = len(arch.layer_dims)
    for i in range(n_layers):
        h = g.relu(g.add(g.matmul(h, params[f"layer{i}/weight"]), params[f"layer{i}/bias"]))
        if train and i < n_layers - 1 and arch.dropout_rate > 0:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng")
            keep = 1.0 - arch.dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = g.mul(h, mask)
    return h


def embed_values(params: ParamSet, images, arch: ArchConfig, train: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Array-in, array-out convenience wrapper around :func:`embed`."""
    g = Graph()
    nodes, bindings = as_parameters(g, params)
    out = embed(nodes, images, arch, train=train, rng=rng)
    return g.evaluate(bindings)[out.id]


def param_axpy(base: ParamSet, direction: ParamSet, step) -> ParamSet:
    """``base - step * direction`` entrywise; ``step`` is a ParamSet or scalar.

    Works on arrays and on graph nodes (node entries produce new nodes).
    """
    if list(base.shapes().items()) != list(direction.shapes().items()):
        raise ValueError("base and direction ParamSets differ in layout")
    scalar = not isinstance(step, ParamSet)
    if not scalar and list(step.shapes().items()) != list(base.shapes().items()):
        raise ValueError("step ParamSet differs in layout")
    out = {}
    for name, b in base.items():
        s = step if scalar else step[name]
        d = direction[name]
        if isinstance(b, Node) or isinstance(d, Node) or isinstance(s, Node):
            g = next(x.graph for x in (b, d, s) if isinstance(x, Node))
            out[name] = g.sub(b, g.mul(s, d))
        else:
            out[name] = np.subtract(b, np.multiply(s, d))
    return ParamSet(out)
