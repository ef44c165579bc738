"""Reverse-mode automatic differentiation over a static, append-only graph.

Nodes carry numpy ``float64`` values (0-d for scalars). A graph is built
symbolically, then evaluated against parameter bindings. Gradients are
produced either as plain arrays (from an evaluated graph) or as new graph
nodes (``create_graph=True``), which can themselves be differentiated.

Every derivative rule is written once against a small op vocabulary that
both :class:`Graph` (symbolic) and :class:`NumericOps` (arrays) implement,
so the two gradient lanes perform the same arithmetic in the same order.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    pass


class NonFiniteError(GraphError):
    pass


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError as exc:
        raise GraphError(f"incompatible shapes {a} and {b}") from exc


def _reduced_shape(shape: tuple, axis, keepdims: bool) -> tuple:
    if axis is None:
        return tuple(1 for _ in shape) if keepdims else ()
    axis = axis % len(shape)
    if keepdims:
        return tuple(1 if i == axis else d for i, d in enumerate(shape))
    return tuple(d for i, d in enumerate(shape) if i != axis)


def _sum_to(x: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``x`` down to ``shape`` (inverse of numpy broadcasting)."""
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x


class NumericOps:
    """Array implementation of the op vocabulary; also the forward kernels."""

    @staticmethod
    def const(value):
        return np.asarray(value, dtype=np.float64)

    @staticmethod
    def ones_like(x):
        return np.ones(np.shape(x))

    @staticmethod
    def zeros(shape):
        return np.zeros(shape)

    add = staticmethod(np.add)
    sub = staticmethod(np.subtract)
    mul = staticmethod(np.multiply)
    div = staticmethod(np.divide)
    neg = staticmethod(np.negative)
    exp = staticmethod(np.exp)
    square = staticmethod(np.square)
    sqrt = staticmethod(np.sqrt)
    matmul = staticmethod(np.matmul)

    @staticmethod
    def log(x):
        return np.log(x)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def relu_mask(x):
        return (x > 0.0).astype(np.float64)

    @staticmethod
    def floor(x, c):
        return np.maximum(x, c)

    @staticmethod
    def floor_mask(x, c):
        return (x > c).astype(np.float64)

    @staticmethod
    def transpose(x):
        return np.transpose(x)

    @staticmethod
    def sum(x, axis=None, keepdims=False):
        return np.sum(x, axis=axis, keepdims=keepdims)

    @staticmethod
    def max(x, axis=None, keepdims=False):
        return np.max(x, axis=axis, keepdims=keepdims)

    @staticmethod
    def broadcast_to(x, shape):
        return np.broadcast_to(x, shape).copy()

    @staticmethod
    def sum_to(x, shape):
        return _sum_to(np.asarray(x), tuple(shape))

    @staticmethod
    def stop_gradient(x):
        return x

    @staticmethod
    def take(x, start, stop, shape):
        return np.asarray(x)[start:stop].reshape(shape)

    @staticmethod
    def scatter(x, start, full_shape):
        out = np.zeros(full_shape)
        n = int(np.prod(np.shape(x))) // max(int(np.prod(full_shape[1:])), 1)
        out[start:start + n] = np.reshape(x, (n, *full_shape[1:]))
        return out


_NUMERIC = NumericOps()


# -- derivative rules -------------------------------------------------------
# rule(ops, inputs, out, g, attrs, need) -> list of input gradients (or None).
# ``inputs``/``out``/``g`` are nodes or arrays depending on the lane.

def _shape(x) -> tuple:
    return x.shape if isinstance(x, Node) else np.shape(x)


def _vjp_add(ops, xs, out, g, at, need):
    a, b = xs
    return [ops.sum_to(g, _shape(a)) if need[0] else None,
            ops.sum_to(g, _shape(b)) if need[1] else None]


def _vjp_sub(ops, xs, out, g, at, need):
    a, b = xs
    return [ops.sum_to(g, _shape(a)) if need[0] else None,
            ops.neg(ops.sum_to(g, _shape(b))) if need[1] else None]


def _vjp_mul(ops, xs, out, g, at, need):
    a, b = xs
    return [ops.sum_to(ops.mul(g, b), _shape(a)) if need[0] else None,
            ops.sum_to(ops.mul(g, a), _shape(b)) if need[1] else None]


def _vjp_div(ops, xs, out, g, at, need):
    a, b = xs
    ga = gb = None
    if need[0]:
        ga = ops.sum_to(ops.div(g, b), _shape(a))
    if need[1]:
        gb = ops.neg(ops.sum_to(ops.div(ops.mul(g, out), b), _shape(b)))
    return [ga, gb]


def _vjp_neg(ops, xs, out, g, at, need):
    return [ops.neg(g)]


def _vjp_exp(ops, xs, out, g, at, need):
    return [ops.mul(g, out)]


def _vjp_log(ops, xs, out, g, at, need):
    return [ops.div(g, xs[0])]


def _vjp_relu(ops, xs, out, g, at, need):
    return [ops.mul(g, ops.relu_mask(xs[0]))]


def _vjp_floor(ops, xs, out, g, at, need):
    return [ops.mul(g, ops.floor_mask(xs[0], at["c"]))]


def _vjp_square(ops, xs, out, g, at, need):
    return [ops.mul(g, ops.mul(ops.const(2.0), xs[0]))]


def _vjp_sqrt(ops, xs, out, g, at, need):
    return [ops.div(g, ops.mul(ops.const(2.0), out))]


def _vjp_matmul(ops, xs, out, g, at, need):
    a, b = xs
    return [ops.matmul(g, ops.transpose(b)) if need[0] else None,
            ops.matmul(ops.transpose(a), g) if need[1] else None]


def _vjp_transpose(ops, xs, out, g, at, need):
    return [ops.transpose(g)]


def _vjp_sum(ops, xs, out, g, at, need):
    shape = _shape(xs[0])
    axis, keepdims = at["axis"], at["keepdims"]
    if axis is not None and not keepdims:
        raise GraphError("sum over a single axis requires keepdims=True")
    return [ops.broadcast_to(g, shape)]


def _vjp_broadcast_to(ops, xs, out, g, at, need):
    return [ops.sum_to(g, _shape(xs[0]))]


def _vjp_sum_to(ops, xs, out, g, at, need):
    return [ops.broadcast_to(g, _shape(xs[0]))]


def _vjp_take(ops, xs, out, g, at, need):
    return [ops.scatter(g, at["start"], _shape(xs[0]))]


def _vjp_scatter(ops, xs, out, g, at, need):
    x = xs[0]
    full = at["full_shape"]
    rows = int(np.prod(_shape(x))) // max(int(np.prod(full[1:])), 1)
    return [ops.take(g, at["start"], at["start"] + rows, _shape(x))]


_RULES: dict[str, Callable | None] = {
    "constant": None,
    "parameter": None,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": _vjp_neg,
    "exp": _vjp_exp,
    "log": _vjp_log,
    "relu": _vjp_relu,
    "floor": _vjp_floor,
    "square": _vjp_square,
    "sqrt": _vjp_sqrt,
    "matmul": _vjp_matmul,
    "transpose": _vjp_transpose,
    "sum": _vjp_sum,
    "broadcast_to": _vjp_broadcast_to,
    "sum_to": _vjp_sum_to,
    "take": _vjp_take,
    "scatter": _vjp_scatter,
    # piecewise-constant or explicitly detached: zero derivative
    "max": None,
    "relu_mask": None,
    "floor_mask": None,
    "stop_gradient": None,
}


class Node:
    """One vertex of a :class:`Graph`. Arithmetic operators append new nodes."""

    __slots__ = ("graph", "id", "op", "inputs", "shape", "attrs", "value", "name")

    def __init__(self, graph, id, op, inputs, shape, attrs=None, value=None, name=None):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.attrs = attrs
        self.value = value
        self.name = name

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def T(self):
        return self.graph.transpose(self)

    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __rmul__(self, other):
        return self.graph.mul(other, self)

    def __truediv__(self, other):
        return self.graph.div(self, other)

    def __rtruediv__(self, other):
        return self.graph.div(other, self)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


class Graph:
    """Append-only computation graph.

    Nodes are created through the builder methods (``g.add``, ``g.matmul``,
    ...) or operator overloading on :class:`Node`. Input ids are always
    smaller than the consuming node's id, so node order is topological.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameter_ids: set[int] = set()
        self._evaluated = 0

    def __len__(self):
        return len(self.nodes)

    # -- construction --------------------------------------------------------

    def _append(self, op, inputs, shape, attrs=None, value=None, name=None) -> Node:
        node = Node(self, len(self.nodes), op, inputs, shape, attrs, value, name)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise GraphError(f"node {x.id} belongs to a different graph")
            return x
        return self.const(x)

    def const(self, value, name=None) -> Node:
        value = np.array(value, dtype=np.float64)
        value.flags.writeable = False
        return self._append("constant", (), value.shape, value=value, name=name)

    def parameter(self, shape=(), name=None) -> Node:
        node = self._append("parameter", (), tuple(shape), name=name)
        self.parameter_ids.add(node.id)
        return node

    def _binary(self, op, a, b) -> Node:
        a, b = self._lift(a), self._lift(b)
        return self._append(op, (a.id, b.id), _broadcast_shape(a.shape, b.shape))

    def _unary(self, op, x, shape=None, attrs=None) -> Node:
        x = self._lift(x)
        return self._append(op, (x.id,), x.shape if shape is None else shape, attrs)

    def add(self, a, b):
        return self._binary("add", a, b)

    def sub(self, a, b):
        return self._binary("sub", a, b)

    def mul(self, a, b):
        return self._binary("mul", a, b)

    def div(self, a, b):
        return self._binary("div", a, b)

    def neg(self, x):
        return self._unary("neg", x)

    def exp(self, x):
        return self._unary("exp", x)

    def log(self, x):
        return self._unary("log", x)

    def relu(self, x):
        return self._unary("relu", x)

    def relu_mask(self, x):
        return self._unary("relu_mask", x)

    def floor(self, x, c: float):
        """Elementwise ``max(x, c)`` against a fixed constant ``c``."""
        return self._unary("floor", x, attrs={"c": float(c)})

    def floor_mask(self, x, c: float):
        return self._unary("floor_mask", x, attrs={"c": float(c)})

    def square(self, x):
        return self._unary("square", x)

    def sqrt(self, x):
        return self._unary("sqrt", x)

    def stop_gradient(self, x):
        return self._unary("stop_gradient", x)

    def transpose(self, x):
        x = self._lift(x)
        return self._unary("transpose", x, shape=tuple(reversed(x.shape)))

    def matmul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise GraphError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        return self._append("matmul", (a.id, b.id), (a.shape[0], b.shape[1]))

    def sum(self, x, axis=None, keepdims=False):
        x = self._lift(x)
        if axis is not None and not keepdims:
            raise GraphError("sum over a single axis requires keepdims=True")
        shape = _reduced_shape(x.shape, axis, keepdims)
        return self._unary("sum", x, shape=shape, attrs={"axis": axis, "keepdims": keepdims})

    def max(self, x, axis=None, keepdims=False):
        """Maximum, treated as a constant by differentiation (softmax shift)."""
        x = self._lift(x)
        shape = _reduced_shape(x.shape, axis, keepdims)
        return self._unary("max", x, shape=shape, attrs={"axis": axis, "keepdims": keepdims})

    def broadcast_to(self, x, shape):
        x = self._lift(x)
        shape = tuple(shape)
        if _broadcast_shape(x.shape, shape) != shape:
            raise GraphError(f"cannot broadcast {x.shape} to {shape}")
        return self._unary("broadcast_to", x, shape=shape, attrs={"shape": shape})

    def sum_to(self, x, shape):
        x = self._lift(x)
        shape = tuple(shape)
        if x.shape == shape:
            return x
        return self._unary("sum_to", x, shape=shape, attrs={"shape": shape})

    def take(self, x, start: int, stop: int, shape=None):
        """Rows ``x[start:stop]`` (along axis 0), optionally reshaped."""
        x = self._lift(x)
        if x.ndim < 1 or not 0 <= start <= stop <= x.shape[0]:
            raise GraphError(f"bad slice [{start}:{stop}] of shape {x.shape}")
        rows = (stop - start, *x.shape[1:])
        shape = rows if shape is None else tuple(shape)
        if int(np.prod(shape)) != int(np.prod(rows)):
            raise GraphError(f"slice of shape {rows} does not fit shape {shape}")
        attrs = {"start": start, "stop": stop, "shape": shape}
        return self._unary("take", x, shape=shape, attrs=attrs)

    def scatter(self, x, start: int, full_shape):
        """Place ``x`` (reshaped to rows) at row ``start`` of a zero array."""
        x = self._lift(x)
        full_shape = tuple(full_shape)
        return self._unary("scatter", x, shape=full_shape, attrs={"start": start, "full_shape": full_shape})

    def ones_like(self, x):
        return self.const(np.ones(x.shape))

    def zeros(self, shape):
        return self.const(np.zeros(shape))

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, bindings: Mapping) -> dict[int, np.ndarray]:
        """Compute every node's value; returns ``{node_id: value}``."""
        values: dict[int, np.ndarray] = {}
        bound = {(k.id if isinstance(k, Node) else int(k)): v for k, v in bindings.items()}
        ops = _NUMERIC
        for node in self.nodes:
            op = node.op
            if op == "constant":
                value = node.value
            elif op == "parameter":
                if node.id not in bound:
                    label = f" ({node.name})" if node.name else ""
                    raise GraphError(f"no binding for parameter {node.id}{label}")
                value = np.asarray(bound[node.id], dtype=np.float64)
                if value.shape != node.shape:
                    raise GraphError(
                        f"binding for parameter {node.id} has shape {value.shape}, expected {node.shape}")
            else:
                args = [values[i] for i in node.inputs]
                at = node.attrs
                if op in ("sum", "max"):
                    value = getattr(ops, op)(args[0], at["axis"], at["keepdims"])
                elif op in ("floor", "floor_mask"):
                    value = getattr(ops, op)(args[0], at["c"])
                elif op in ("broadcast_to", "sum_to"):
                    value = getattr(ops, op)(args[0], at["shape"])
                elif op == "take":
                    value = ops.take(args[0], at["start"], at["stop"], at["shape"])
                elif op == "scatter":
                    value = ops.scatter(args[0], at["start"], at["full_shape"])
                else:
                    with np.errstate(all="ignore"):  # non-finite results are reported below
                        value = getattr(ops, op)(*args)
                value = np.asarray(value, dtype=np.float64)
                if not np.isfinite(value).all():
                    raise NonFiniteError(f"non-finite value at node {node.id} ({op})")
            node.value = value
            values[node.id] = value
        self._evaluated = len(self.nodes)
        return values

    # -- differentiation -----------------------------------------------------

    def backward(self, output: Node, wrt: Sequence[Node], create_graph: bool = False) -> list:
        """Adjoints of ``output`` with respect to arbitrary nodes ``wrt``.

        Unlike :func:`gradient` this accepts intermediate nodes, which is how
        unrolled inner loops differentiate a step loss w.r.t. adapted weights.
        """
        output = self._lift(output)
        wrt = [self._lift(w) for w in wrt]
        if output.shape != ():
            raise GraphError(f"output node {output.id} is not scalar (shape {output.shape})")
        if not create_graph and self._evaluated <= output.id:
            raise GraphError("graph must be evaluated before a numeric gradient")
        if not wrt:
            return []
        lo = min(w.id for w in wrt)
        nodes = self.nodes
        # forward reachability from wrt
        live = bytearray(output.id + 1)
        for w in wrt:
            if w.id <= output.id:
                live[w.id] = 1
        for i in range(lo, output.id + 1):
            if not live[i] and _RULES.get(nodes[i].op) is not None:
                for j in nodes[i].inputs:
                    if live[j]:
                        live[i] = 1
                        break

        if create_graph:
            ops = self
            operand = nodes.__getitem__
        else:
            ops = _NUMERIC
            operand = lambda i: nodes[i].value  # noqa: E731

        grads: dict[int, object] = {}
        if live[output.id]:
            grads[output.id] = ops.const(1.0)
        for i in range(output.id, lo - 1, -1):
            g = grads.get(i)
            if g is None:
                continue
            node = nodes[i]
            rule = _RULES[node.op]
            if rule is None:
                continue
            need = [bool(live[j]) for j in node.inputs]
            if not any(need):
                continue
            xs = [operand(j) for j in node.inputs]
            contribs = rule(ops, xs, operand(i), g, node.attrs, need)
            for j, c, n in zip(node.inputs, contribs, need):
                if not n or c is None:
                    continue
                prev = grads.get(j)
                grads[j] = c if prev is None else ops.add(prev, c)
        out = []
        for w in wrt:
            g = grads.get(w.id)
            if g is None:
                g = ops.zeros(w.shape)
            out.append(g)
        return out


def evaluate(graph: Graph, bindings: Mapping) -> dict[int, np.ndarray]:
    return graph.evaluate(bindings)


def gradient(graph: Graph, output, wrt: Sequence, create_graph: bool = False) -> list:
    """d(output)/d(wrt) for parameter nodes ``wrt`` (nodes or ids).

    Returns arrays, or nodes when ``create_graph`` is set; those nodes can be
    evaluated and differentiated again for higher-order derivatives.
    """
    output = graph.nodes[output] if isinstance(output, (int, np.integer)) else output
    params = []
    for w in wrt:
        node = graph.nodes[w] if isinstance(w, (int, np.integer)) else w
        if node.id not in graph.parameter_ids:
            raise GraphError(f"node {node.id} is not a parameter")
        params.append(node)
    return graph.backward(output, params, create_graph=create_graph)


def finite_difference_check(loss_fn: Callable[[Graph, Node], Node], point, eps: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn(graph, x)`` builds a scalar loss from a 1-d parameter node ``x``.
    The graph is built once and re-evaluated at each perturbed point.
    Relative error per coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = np.array(point, dtype=np.float64).ravel()
    g = Graph()
    x = g.parameter(point.shape, name="x")
    loss = loss_fn(g, x)
    g.evaluate({x: point})
    (analytic,) = g.backward(loss, [x])
    numeric = np.empty_like(point)
    for i in range(point.size):
        hi, lo = point.copy(), point.copy()
        hi[i] += eps
        lo[i] -= eps
        f_hi = g.evaluate({x: hi})[loss.id]
        f_lo = g.evaluate({x: lo})[loss.id]
        numeric[i] = (f_hi - f_lo) / (2 * eps)
    if not (np.isfinite(numeric).all() and np.isfinite(analytic).all()):
        raise NonFiniteError("non-finite loss during finite-difference check")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if point.size else 0.0
