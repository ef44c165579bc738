"""Non-parametric classifier heads over embeddings.

Each head accepts either plain arrays or graph nodes. With arrays the result
is an array; with nodes the result is a node in the same graph, so the heads
compose into differentiable losses. Rows of a probability matrix are the
per-query label distributions.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node

NORM_FLOOR = 1e-12
LOG_FLOOR = 1e-12

HEAD_KINDS = ("matching", "prototypical")


def _graph_of(*xs) -> Graph | None:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def _run(build, *arrays):
    """Build on a throwaway graph from constant arrays and return the value."""
    g = Graph()
    out = build(g, *[g.const(np.asarray(a, dtype=np.float64)) for a in arrays])
    return g.evaluate({})[out.id]


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def softmax_rows(g: Graph, z: Node) -> Node:
    shift = g.max(z, axis=1, keepdims=True)
    e = g.exp(g.sub(z, shift))
    return g.div(e, g.sum(e, axis=1, keepdims=True))


def _unit_rows(g: Graph, x: Node) -> Node:
    sq = g.sum(g.mul(x, x), axis=1, keepdims=True)
    floor = NORM_FLOOR * NORM_FLOOR
    # rows with norm below the floor map to zero
    return g.mul(g.div(x, g.sqrt(g.floor(sq, floor))), g.floor_mask(sq, floor))


def cosine_matrix(g: Graph, a: Node, b: Node) -> Node:
    """Pairwise cosine similarity between rows of ``a`` (m, d) and ``b`` (n, d)."""
    return g.matmul(_unit_rows(g, a), g.transpose(_unit_rows(g, b)))


def sq_distance_matrix(g: Graph, a: Node, b: Node) -> Node:
    """Pairwise squared Euclidean distance between rows of ``a`` and ``b``."""
    aa = g.sum(g.mul(a, a), axis=1, keepdims=True)
    bb = g.transpose(g.sum(g.mul(b, b), axis=1, keepdims=True))
    cross = g.matmul(a, g.transpose(b))
    return g.sub(g.add(aa, bb), g.mul(2.0, cross))


def _arr(x):
    return x if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _check_vectors(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"vectors must have equal length, got {a.shape} and {b.shape}")
    return a[None, :], b[None, :]


def cosine_similarity(a, b) -> float:
    a, b = _check_vectors(a, b)
    return float(_run(cosine_matrix, a, b)[0, 0])


def squared_euclidean(a, b) -> float:
    a, b = _check_vectors(a, b)
    return float(np.sum((a - b) ** 2))


def _check_support(embeds, labels, n_classes, need_all=True):
    labels = np.asarray(labels, dtype=np.int64)
    n = embeds.shape[0]
    if n == 0:
        raise ValueError("support set is empty")
    if labels.shape != (n,):
        raise ValueError(f"{n} support embeddings but {labels.size} labels")
    if need_all:
        missing = sorted(set(range(n_classes)) - set(labels.tolist()))
        if missing:
            raise ValueError(f"support set has no items for classes {missing}")
    return labels


def matching_predict(support, labels, n_classes: int, queries):
    """Attention over support items: softmax of cosine similarity, summed per class."""
    support, queries = _arr(support), _arr(queries)
    labels = _check_support(support, labels, n_classes, need_all=False)
    onehot = one_hot(labels, n_classes)
    g = _graph_of(support, queries)
    if g is None:
        return _run(lambda g, s, q: _matching(g, s, onehot, q), support, queries)
    return _matching(g, support, onehot, queries)


def _matching(g, support, onehot, queries):
    attn = softmax_rows(g, cosine_matrix(g, g._lift(queries), g._lift(support)))
    return g.matmul(attn, onehot)


def averaging_matrix(labels, n_classes: int) -> np.ndarray:
    onehot = one_hot(labels, n_classes).T
    counts = onehot.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        empty = np.flatnonzero(counts[:, 0] == 0).tolist()
        raise ValueError(f"classes {empty} have no support items")
    return onehot / counts


def compute_prototypes(support, labels, n_classes: int):
    """Class-mean embeddings, ordered by class index."""
    support = _arr(support)
    labels = _check_support(support, labels, n_classes)
    avg = averaging_matrix(labels, n_classes)
    g = _graph_of(support)
    if g is None:
        return _run(lambda g, s: g.matmul(avg, s), support)
    return g.matmul(avg, support)


def proto_predict(prototypes, queries):
    """Softmax over classes of negative squared distance to each prototype."""
    prototypes, queries = _arr(prototypes), _arr(queries)
    if prototypes.shape[0] == 0:
        raise ValueError("no prototypes")
    g = _graph_of(prototypes, queries)
    build = lambda g, c, q: softmax_rows(g, g.neg(sq_distance_matrix(g, q, c)))  # noqa: E731
    if g is None:
        return _run(build, prototypes, queries)
    return build(g, g._lift(prototypes), g._lift(queries))


def predict(head_kind: str, support, labels, n_classes: int, queries):
    """Dispatch to the matching or prototypical head."""
    if head_kind == "matching":
        return matching_predict(support, labels, n_classes, queries)
    if head_kind == "prototypical":
        return proto_predict(compute_prototypes(support, labels, n_classes), queries)
    raise ValueError(f"unknown head kind {head_kind!r}; expected one of {HEAD_KINDS}")


def cross_entropy(probs, labels):
    """Mean of ``-log(max(p[true], 1e-12))`` over rows of ``probs``."""
    probs = _arr(probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n_classes = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    onehot = one_hot(labels, n_classes)
    g = _graph_of(probs)

    def build(g, p):
        if len(p.shape) == 1:
            p = g.broadcast_to(p, (1, p.shape[0]))
        p_true = g.sum(g.mul(p, onehot), axis=1, keepdims=True)
        nll = g.neg(g.log(g.floor(p_true, LOG_FLOOR)))
        return g.div(g.sum(nll), float(labels.size))

    if g is None:
        return float(_run(build, probs))
    return build(g, probs)


def linear_softmax_predict(weights, embeds, n_classes: int):
    """Softmax of ``embeds @ weight + bias``; ``weights`` holds 'weight' (d, N) and 'bias' (N,)."""
    w, b, embeds = _arr(weights["weight"]), _arr(weights["bias"]), _arr(embeds)
    w_shape = w.shape if isinstance(w, Node) else np.shape(w)
    b_shape = b.shape if isinstance(b, Node) else np.shape(b)
    if w_shape[-1] != n_classes or b_shape != (n_classes,):
        raise ValueError(f"weights are shaped for {w_shape[-1]} classes, not {n_classes}")
    build = lambda g, w, b, e: softmax_rows(g, g.add(g.matmul(e, w), b))  # noqa: E731
    g = _graph_of(w, b, embeds)
    if g is None:
        return _run(build, w, b, embeds)
    return build(g, g._lift(w), g._lift(b), g._lift(embeds))


def accuracy(probs, labels) -> float:
    probs = np.asarray(probs)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))
