import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from metametric.episodes import (DatasetFormatError, MetaSetSpec, SourceDataset, generate_synthetic_source,
                                 load_source, merge_sources, sample_episode, save_source, split_support)


@pytest.fixture(scope="module")
def source():
    return generate_synthetic_source(3, 12, 25)


def test_episode_sizes(source):
    ep = sample_episode(source, MetaSetSpec(5, 2, 15), np.random.default_rng(0))
    assert ep.support_x.shape == (10, 64) and ep.query_x.shape == (75, 64)
    ep = sample_episode(source, MetaSetSpec(3, 4, 15), np.random.default_rng(0))
    assert len(ep.support_y) == 12 and len(ep.query_y) == 45


def test_too_few_classes_states_deficit():
    small = generate_synthetic_source(3, 4, 25)
    with pytest.raises(ValueError, match="need 1 more"):
        sample_episode(small, MetaSetSpec(5, 2), np.random.default_rng(0))


def test_too_few_samples_states_deficit():
    small = generate_synthetic_source(3, 6, 10)
    with pytest.raises(ValueError, match="needs 17"):
        sample_episode(small, MetaSetSpec(5, 2, 15), np.random.default_rng(0))


@pytest.mark.parametrize("k,n,parts", [(2, 5, (1, 1)), (4, 3, (2, 2)), (3, 4, (2, 1))])
def test_split_support_counts(source, k, n, parts):
    ep = sample_episode(source, MetaSetSpec(n, k, 3), np.random.default_rng(1))
    a, b = split_support(ep, np.random.default_rng(2))
    assert np.array_equal(np.bincount(a.y, minlength=n), np.full(n, parts[0]))
    assert np.array_equal(np.bincount(b.y, minlength=n), np.full(n, parts[1]))


def test_split_support_rejects_one_shot(source):
    ep = sample_episode(source, MetaSetSpec(5, 1, 3), np.random.default_rng(1))
    with pytest.raises(ValueError, match="multi-source"):
        split_support(ep, np.random.default_rng(0))


def test_class_choice_is_uniform(source):
    # every class should be drawn about equally often across many episodes
    counts = np.zeros(source.n_classes)
    rng = np.random.default_rng(7)
    for _ in range(2000):
        ep = sample_episode(source, MetaSetSpec(3, 1, 1), rng)
        counts[ep.classes] += 1
    assert chisquare(counts).pvalue > 0.001


def test_label_permutation_varies(source):
    rng = np.random.default_rng(3)
    firsts = {int(sample_episode(source, MetaSetSpec(5, 1, 1), rng).classes[0]) for _ in range(50)}
    assert len(firsts) > 3


@given(st.integers(0, 2**31), st.integers(2, 6), st.integers(1, 4), st.integers(1, 5))
def test_episode_invariants(seed, n, k, q):
    src = generate_synthetic_source(11, 8, 12)
    ep = sample_episode(src, MetaSetSpec(n, k, q), np.random.default_rng(seed))
    assert np.array_equal(np.bincount(ep.support_y, minlength=n), np.full(n, k))
    assert np.array_equal(np.bincount(ep.query_y, minlength=n), np.full(n, q))
    assert not {tuple(r) for r in ep.support_index} & {tuple(r) for r in ep.query_index}
    assert len(set(ep.classes.tolist())) == n


def test_generator_determinism_and_noise_free():
    a = generate_synthetic_source(5, 6, 10, class_seed=2)
    b = generate_synthetic_source(5, 6, 10, class_seed=2)
    assert a.equals(b)
    clean = generate_synthetic_source(5, 6, 10, noise_rate=0.0, max_shift=0)
    for cls in clean.classes:
        assert (cls == cls[0]).all()
    assert ((a.classes[0] == 0) | (a.classes[0] == 1)).all()


def _nn_episode_accuracy(src, n_tasks=100, seed=0):
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(n_tasks):
        ep = sample_episode(src, MetaSetSpec(5, 1, 5), rng)
        d = ((ep.query_x[:, None, :] - ep.support_x[None, :, :]) ** 2).sum(-1)
        accs.append(np.mean(ep.support_y[d.argmin(1)] == ep.query_y))
    return float(np.mean(accs))


def test_generated_classes_are_learnable():
    glyphs = generate_synthetic_source(5, 20, 20, class_seed=1)
    assert _nn_episode_accuracy(glyphs) > 0.2 + 0.1


def test_related_sources_share_strokes_but_not_classes():
    a = generate_synthetic_source(9, 15, 5, noise_rate=0.0, max_shift=0, class_seed=1)
    b = generate_synthetic_source(9, 15, 5, noise_rate=0.0, max_shift=0, class_seed=2)
    noise = generate_synthetic_source(9, 15, 5, noise_rate=0.0, max_shift=0, class_seed=3, unrelated=True)
    pa, pb, pn = (np.array([c[0] for c in s.classes]) for s in (a, b, noise))
    # the union of stroke pixels used by one family is a small, shared support
    used_a, used_b = pa.max(0) > 0, pb.max(0) > 0
    assert (used_a & used_b).sum() / used_b.sum() > 0.8
    assert (pn.max(0) > 0).mean() > 0.95
    assert len({r.tobytes() for r in pa} & {r.tobytes() for r in pb}) < 15


def test_merge_sources_is_class_union():
    a = generate_synthetic_source(1, 3, 4)
    b = generate_synthetic_source(2, 2, 4)
    m = merge_sources([a, b])
    assert m.n_classes == 5
    assert np.array_equal(m.classes[3], b.classes[0])
    with pytest.raises(ValueError):
        merge_sources([a, generate_synthetic_source(1, 2, 4, image_size=6)])


def test_save_load_roundtrip_bit_exact(tmp_path):
    src = generate_synthetic_source(4, 3, 5)
    jittered = SourceDataset(src.name, src.image_size,
                             tuple(np.clip(c * 0.999 + 1e-3 / 3, 0, 1) for c in src.classes))
    save_source(jittered, tmp_path / "d")
    assert load_source(tmp_path / "d").equals(jittered)


def test_missing_class_file(tmp_path):
    save_source(generate_synthetic_source(4, 2, 5), tmp_path)
    (tmp_path / "manifest").write_text("name=x\nimage_size=8\nclasses=3\n")
    with pytest.raises(DatasetFormatError, match="class_002"):
        load_source(tmp_path)


def test_empty_class_file(tmp_path):
    save_source(generate_synthetic_source(4, 2, 5), tmp_path)
    (tmp_path / "class_001.csv").write_text("")
    with pytest.raises(DatasetFormatError, match="empty"):
        load_source(tmp_path)


def test_bad_pixel_reports_line(tmp_path):
    save_source(generate_synthetic_source(4, 2, 5), tmp_path)
    p = tmp_path / "class_000.csv"
    lines = p.read_text().splitlines()
    lines[2] = "1.5," + lines[2].split(",", 1)[1]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r"class_000.csv:3"):
        load_source(tmp_path)


def test_malformed_manifest_line(tmp_path):
    save_source(generate_synthetic_source(4, 2, 5), tmp_path)
    (tmp_path / "manifest").write_text("name=x\nbogus\n")
    with pytest.raises(DatasetFormatError, match=":2"):
        load_source(tmp_path)
