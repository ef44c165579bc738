import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metametric import meta
from metametric.embedding import ArchConfig, ParamSet, init_params
from metametric.episodes import LabeledSamples, MetaSetSpec, generate_synthetic_source, sample_episode, split_support
from metametric.harness import (REPORT_HEADER, EvalReport, PlainConfig, append_report, evaluate_finetune,
                                evaluate_plain, evaluate_predictor, finetune_baseline, train_plain_metric)
from metametric.meta import MetaState, inner_adapt

SMALL = ArchConfig(64, (10,), 5)


@pytest.fixture(scope="module")
def source():
    return generate_synthetic_source(31, 12, 25)


def test_ci_hand_example():
    r = EvalReport.from_per_task([0.8, 0.9, 1.0])
    assert r.mean_accuracy == pytest.approx(0.9)
    assert r.ci95 == pytest.approx(1.96 * 0.1 / np.sqrt(3))
    assert r.ci95 == pytest.approx(0.1132, abs=1e-4)


def test_single_task_has_zero_width():
    assert EvalReport.from_per_task([0.4]).ci95 == 0.0
    with pytest.raises(ValueError):
        EvalReport.from_per_task([])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=50))
def test_ci_nonnegative_and_mean_in_range(xs):
    r = EvalReport.from_per_task(xs)
    assert r.ci95 >= 0 and min(xs) - 1e-12 <= r.mean_accuracy <= max(xs) + 1e-12


def test_oracle_stub_scores_perfectly(source):
    spec = MetaSetSpec(5, 2, n_tasks=20)
    r = evaluate_predictor(lambda ep, rng: np.eye(5)[ep.query_y], source, spec, seed=0)
    assert r.mean_accuracy == 1.0 and r.ci95 == 0.0 and r.n_tasks == 20


def test_random_stub_is_at_chance(source):
    spec = MetaSetSpec(5, 2, 15, n_tasks=600)
    r = evaluate_predictor(lambda ep, rng: rng.dirichlet(np.ones(5), size=len(ep.query_y)), source, spec, seed=0)
    assert 0.18 <= r.mean_accuracy <= 0.22


def test_predictor_shape_checked(source):
    with pytest.raises(ValueError, match="shape"):
        evaluate_predictor(lambda ep, rng: np.ones((2, 2)), source, MetaSetSpec(5, 2, n_tasks=1), seed=0)


def test_plain_training_deterministic(source):
    cfg = PlainConfig("matching", SMALL, iterations=5, seed=3)
    a = train_plain_metric(source, MetaSetSpec(5, 2), "matching", cfg)
    b = train_plain_metric(source, MetaSetSpec(5, 2), "matching", cfg)
    assert a.equals(b)
    zero = train_plain_metric(source, MetaSetSpec(5, 2), "matching", PlainConfig("matching", SMALL, iterations=0))
    assert zero.equals(init_params(SMALL, np.random.default_rng([0, 17])))


def test_finetune_no_op_cases(source):
    params = init_params(SMALL, np.random.default_rng(0))
    ep = sample_episode(source, MetaSetSpec(5, 2), np.random.default_rng(1))
    assert finetune_baseline(params, ep, 0, 0.1, "matching", SMALL, np.random.default_rng(2)).equals(params)
    assert finetune_baseline(params, ep, 3, 0.0, "matching", SMALL, np.random.default_rng(2)).equals(params)


def _quadratic_loss(theta, arch, head_kind, support, query, train=False, rng=None):
    w = theta["w"]
    return w.graph.sum(w.graph.square(w)), None


def test_finetune_quadratic_toy_equals_inner_adapt(monkeypatch, source):
    monkeypatch.setattr(meta, "episode_loss", _quadratic_loss)
    theta = ParamSet({"w": np.array([1.0])})
    arch = ArchConfig(1, (), 1)
    ep = sample_episode(source, MetaSetSpec(2, 2, 1), np.random.default_rng(0))
    ft = finetune_baseline(theta, ep, 2, 0.1, "prototypical", arch, np.random.default_rng(0))
    dummy = LabeledSamples(np.zeros((1, 1)), np.zeros(1, int), 1)
    ms = inner_adapt(MetaState(theta, ParamSet.full_like(theta, 0.1), "prototypical", arch), dummy, dummy, 2)
    assert ft["w"][0] == pytest.approx(0.64, abs=1e-15)
    assert np.array_equal(ft["w"], ms["w"])


def test_evaluate_finetune_runs(source):
    params = init_params(SMALL, np.random.default_rng(0))
    r = evaluate_finetune(params, SMALL, "prototypical", source, MetaSetSpec(3, 2, 5, n_tasks=3), 2, 0.01)
    assert r.n_tasks == 3


def test_append_report(tmp_path, source):
    r = evaluate_plain(init_params(SMALL, np.random.default_rng(0)), SMALL, "matching", source,
                       MetaSetSpec(5, 2, 5, n_tasks=4))
    path = tmp_path / "results.csv"
    append_report(path, "MN", 5, 3, 2, r)
    append_report(path, "MN", 5, 5, 2, r)
    rows = list(csv.reader(path.open()))
    assert rows[0] == REPORT_HEADER
    assert len(rows) == 3 and rows[1][:4] == ["MN", "5", "3", "2"]
