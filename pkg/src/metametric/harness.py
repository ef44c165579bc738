"""Episode-averaged evaluation with 95% confidence intervals, plus baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import heads
from .autodiff import Graph
from .embedding import ArchConfig, ParamSet, as_parameters, embed, init_params, param_axpy
from .episodes import Episode, MetaSetSpec, SourceDataset, sample_episode, split_support
from .meta import MetaState, TrainConfig, _numeric_grad, inner_adapt, inner_sets, task_rng


@dataclass
class EvalReport:
    mean_accuracy: float
    ci95: float
    n_tasks: int
    per_task: list = field(default_factory=list)

    @classmethod
    def from_per_task(cls, per_task) -> "EvalReport":
        x = np.asarray(per_task, dtype=np.float64)
        if x.size == 0:
            raise ValueError("no tasks evaluated")
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        return cls(float(np.mean(x)), 1.96 * sd / math.sqrt(x.size), int(x.size), x.tolist())


Predictor = Callable[[Episode, np.random.Generator], np.ndarray]


def evaluate_predictor(predict: Predictor, source: SourceDataset, spec: MetaSetSpec,
                       seed: int, n_tasks: int | None = None) -> EvalReport:
    """Accuracy of ``predict(episode, rng) -> (n_query, N) probabilities`` over episodes.

    Episode ``t`` uses its own stream seeded by ``(seed, t)``.
    """
    n_tasks = spec.n_tasks if n_tasks is None else n_tasks
    per_task = []
    for t in range(n_tasks):
        rng = task_rng(seed, t)
        episode = sample_episode(source, spec, rng)
        probs = np.asarray(predict(episode, rng))
        if probs.shape != (len(episode.query_y), episode.n_classes):
            raise ValueError(f"predictor returned shape {probs.shape}")
        per_task.append(heads.accuracy(probs, episode.query_y))
    return EvalReport.from_per_task(per_task)


def predict_with(theta: ParamSet, arch: ArchConfig, head_kind: str, episode: Episode) -> np.ndarray:
    """Query probabilities given the full support set, eval-mode embedding."""
    g = Graph()
    nodes, bindings = as_parameters(g, theta)
    zs = embed(nodes, episode.support_x, arch)
    zq = embed(nodes, episode.query_x, arch)
    probs = heads.predict(head_kind, zs, episode.support_y, episode.n_classes, zq)
    return g.evaluate(bindings)[probs.id]


def evaluate_meta(state: MetaState, source: SourceDataset, spec: MetaSetSpec, config: TrainConfig,
                  seed: int = 0, aux: SourceDataset | None = None,
                  aux_spec: MetaSetSpec | None = None, n_tasks: int | None = None) -> EvalReport:
    """Adapt per episode, then score the query set from the full support set.

    With ``aux`` the inner loop runs on an auxiliary task (needed for 1-shot),
    otherwise on the two halves of the support set.
    """
    if aux is None and spec.k_shot < 2:
        raise ValueError("k = 1 evaluation needs an auxiliary source for adaptation")

    def predict(episode, rng):
        aux_episode = sample_episode(aux, aux_spec, rng) if aux is not None else None
        inner_s, inner_q = inner_sets(episode, rng, aux_episode)
        theta = inner_adapt(state, inner_s, inner_q, config.inner_steps, rng)
        return predict_with(theta, state.arch, state.head_kind, episode)

    return evaluate_predictor(predict, source, spec, seed, n_tasks)


@dataclass
class PlainConfig:
    head_kind: str = "prototypical"
    arch: ArchConfig = field(default_factory=ArchConfig)
    iterations: int = 1000
    lr: float = 0.05
    seed: int = 0


def train_plain_metric(source: SourceDataset, spec: MetaSetSpec, head_kind: str | None,
                       config: PlainConfig) -> ParamSet:
    """Episodic SGD on the embedding: query loss given support, one episode per step."""
    head_kind = head_kind or config.head_kind
    rng0 = np.random.default_rng([config.seed, 17])
    theta = init_params(config.arch, rng0)
    proxy = MetaState(theta0=theta, alpha=ParamSet.zeros_like(theta), head_kind=head_kind, arch=config.arch)
    for it in range(config.iterations):
        rng = task_rng(config.seed, it)
        episode = sample_episode(source, spec, rng)
        grad = _numeric_grad(theta, proxy, episode.support, episode.query, True, rng)
        theta = param_axpy(theta, grad, config.lr)
    return theta


def evaluate_plain(theta: ParamSet, arch: ArchConfig, head_kind: str, source: SourceDataset,
                   spec: MetaSetSpec, seed: int = 0, n_tasks: int | None = None) -> EvalReport:
    return evaluate_predictor(lambda ep, rng: predict_with(theta, arch, head_kind, ep),
                              source, spec, seed, n_tasks)


def finetune_baseline(params: ParamSet, episode: Episode, steps: int, lr: float, head_kind: str,
                      arch: ArchConfig, rng: np.random.Generator) -> ParamSet:
    """Plain SGD with a hand-set scalar rate on the split-support inner loss."""
    if lr < 0:
        raise ValueError("lr must be non-negative")
    part1, part2 = split_support(episode, rng)
    proxy = MetaState(theta0=params, alpha=ParamSet.zeros_like(params), head_kind=head_kind, arch=arch)
    theta = params
    for step in range(steps):
        theta = param_axpy(theta, _numeric_grad(theta, proxy, part1, part2, False, rng, step), lr)
    return theta


def evaluate_finetune(params: ParamSet, arch: ArchConfig, head_kind: str, source: SourceDataset,
                      spec: MetaSetSpec, steps: int, lr: float = 0.01, seed: int = 0,
                      n_tasks: int | None = None) -> EvalReport:
    def predict(episode, rng):
        theta = finetune_baseline(params, episode, steps, lr, head_kind, arch, rng)
        return predict_with(theta, arch, head_kind, episode)

    return evaluate_predictor(predict, source, spec, seed, n_tasks)


REPORT_HEADER = ["model", "n_way_train", "n_way_test", "k_shot", "mean_acc", "ci95", "n_tasks"]


def append_report(path, model: str, n_way_train: int, n_way_test: int, k_shot: int,
                  report: EvalReport) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(REPORT_HEADER)
        w.writerow([model, n_way_train, n_way_test, k_shot,
                    f"{report.mean_accuracy:.6f}", f"{report.ci95:.6f}", report.n_tasks])
