import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metametric import heads


def brute_matching(support, labels, n_classes, query):
    """Softmax over support items of cosine similarity, accumulated per class, in plain loops."""
    sims = []
    for s in support:
        ns, nq = max(np.linalg.norm(s), 1e-12), max(np.linalg.norm(query), 1e-12)
        sims.append(float(np.dot(s, query)) / (ns * nq))
    top = max(sims)
    weights = [math.exp(v - top) for v in sims]
    total = sum(weights)
    out = [0.0] * n_classes
    for w, y in zip(weights, labels):
        out[y] += w / total
    return np.array(out)


def brute_prototypes(support, labels, n_classes):
    return np.array([np.mean([s for s, y in zip(support, labels) if y == c], axis=0)
                     for c in range(n_classes)])


def test_cosine_examples():
    assert heads.cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0)
    assert heads.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)
    assert heads.cosine_similarity([1, 2], [2, 1]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        heads.cosine_similarity([1, 2], [1, 2, 3])


def test_squared_euclidean_examples():
    assert heads.squared_euclidean([3, 4], [3, 4]) == 0
    assert heads.squared_euclidean([1, 0], [0, 1]) == 2
    assert heads.squared_euclidean([1, 2], [4, 6]) == 25
    with pytest.raises(ValueError):
        heads.squared_euclidean([1], [1, 2])


def test_matching_self_similarity_wins():
    support = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    probs = heads.matching_predict(support, [0, 1, 2], 3, support[:1])
    assert np.argmax(probs[0]) == 0


def test_matching_symmetric_gives_uniform():
    support = np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0]])
    query = np.array([[0.0, 0.0]])  # zero query: every similarity is 0
    probs = heads.matching_predict(support, [0, 1, 2, 3], 4, query)
    assert np.allclose(probs, 0.25)


def test_matching_two_by_two_example():
    support = np.array([[1, 0], [0.9, 0.1], [0, 1], [0.1, 0.9]])
    probs = heads.matching_predict(support, [0, 0, 1, 1], 2, np.array([[1.0, 0.0]]))
    c = 0.9 / math.sqrt(0.82)
    e = np.exp([1.0, c, 0.0, 0.1 / math.sqrt(0.82)])
    expected = np.array([e[0] + e[1], e[2] + e[3]]) / e.sum()
    assert c == pytest.approx(0.9939, abs=1e-4)
    assert np.allclose(probs[0], expected, atol=1e-12)


def test_matching_empty_support_errors():
    with pytest.raises(ValueError):
        heads.matching_predict(np.zeros((0, 2)), [], 2, np.ones((1, 2)))


def test_prototype_examples():
    emb = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(heads.compute_prototypes(emb, [0, 1], 2), emb)
    protos = heads.compute_prototypes(np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]]), [0, 0, 1], 2)
    assert np.allclose(protos[0], [1.0, 1.0])
    with pytest.raises(ValueError):
        heads.compute_prototypes(emb, [0, 0], 2)


def test_proto_predict_examples():
    probs = heads.proto_predict(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([[0.5, 0.0]]))
    assert np.allclose(probs[0], [0.8808, 0.1192], atol=1e-4)
    far = heads.proto_predict(np.array([[20.0, 0], [0, 0], [0, 20.0]]), np.array([[0.0, 0.0]]))
    assert np.argmax(far[0]) == 1 and far[0, 1] >= 0.99
    even = heads.proto_predict(np.array([[1.0, 0], [-1.0, 0], [0, 1.0]]), np.array([[0.0, 0.0]]))
    assert np.allclose(even, 1 / 3)
    with pytest.raises(ValueError):
        heads.proto_predict(np.zeros((0, 2)), np.ones((1, 2)))


def test_cross_entropy_examples():
    assert heads.cross_entropy(np.array([[0.0, 1.0, 0.0]]), [1]) == pytest.approx(0.0, abs=1e-15)
    assert heads.cross_entropy(np.full((1, 5), 0.2), [3]) == pytest.approx(1.60944, abs=1e-5)
    assert heads.cross_entropy(np.array([0.7, 0.2, 0.1]), 1) == pytest.approx(-math.log(0.2))
    with pytest.raises(ValueError):
        heads.cross_entropy(np.array([[0.5, 0.5]]), [2])


def test_cross_entropy_floors_zero_probability():
    assert heads.cross_entropy(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))


def test_linear_softmax_examples():
    zero = {"weight": np.zeros((4, 3)), "bias": np.zeros(3)}
    assert np.allclose(heads.linear_softmax_predict(zero, np.ones((2, 4)), 3), 1 / 3)
    biased = {"weight": np.zeros((4, 3)), "bias": np.array([10.0, 0, 0])}
    assert heads.linear_softmax_predict(biased, np.ones((1, 4)), 3)[0, 0] >= 0.9999
    eye = {"weight": np.eye(2), "bias": np.zeros(2)}
    assert np.allclose(heads.linear_softmax_predict(eye, np.array([[2.0, 0.0]]), 2)[0],
                       [0.8808, 0.1192], atol=1e-4)
    with pytest.raises(ValueError):
        heads.linear_softmax_predict(zero, np.ones((1, 4)), 2)


def test_predict_unknown_head():
    with pytest.raises(ValueError, match="unknown head"):
        heads.predict("linear", np.ones((2, 2)), [0, 1], 2, np.ones((1, 2)))


@st.composite
def head_instances(draw):
    n = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    d = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n), k)
    rng.shuffle(labels)
    return rng.normal(size=(n * k, d)) * rng.uniform(0.1, 5), labels, n, rng.normal(size=(3, d))


@given(head_instances())
def test_matching_matches_brute_force(inst):
    support, labels, n, queries = inst
    probs = heads.matching_predict(support, labels, n, queries)
    for q, row in zip(queries, probs):
        assert np.allclose(row, brute_matching(support, labels, n, q), atol=1e-9, rtol=0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


@given(head_instances())
def test_prototypes_match_brute_force(inst):
    support, labels, n, queries = inst
    protos = heads.compute_prototypes(support, labels, n)
    assert np.allclose(protos, brute_prototypes(support, labels, n), atol=1e-12, rtol=0)
    probs = heads.proto_predict(protos, queries)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (probs >= 0).all()


@given(head_instances(), st.integers(0, 1000))
def test_prototypes_permutation_invariant(inst, seed):
    support, labels, n, _ = inst
    perm = np.random.default_rng(seed).permutation(len(labels))
    a = heads.compute_prototypes(support, labels, n)
    b = heads.compute_prototypes(support[perm], labels[perm], n)
    assert np.allclose(a, b, atol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
def test_softmax_shift_invariant(logits, shift):
    a = heads._run(heads.softmax_rows, np.array([logits]))
    b = heads._run(heads.softmax_rows, np.array([logits]) + shift)
    assert np.allclose(a, b, atol=1e-9)
    assert a.sum() == pytest.approx(1.0)
