"""Auxiliary-source selection by cross-source transfer accuracy."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .embedding import ArchConfig, ParamSet
from .episodes import MetaSetSpec, SourceDataset, merge_sources
from .harness import PlainConfig, evaluate_plain, train_plain_metric


@dataclass(frozen=True)
class SourceScore:
    source_name: str
    accuracy: float
    n_tasks: int


def train_source_metric_learner(source: SourceDataset, spec: MetaSetSpec, config: PlainConfig) -> ParamSet:
    return train_plain_metric(source, spec, config.head_kind, config)


def cross_source_accuracy(model: ParamSet, head_kind: str, target: SourceDataset, spec: MetaSetSpec,
                          n_tasks: int, seed: int, arch: ArchConfig, name: str = "") -> SourceScore:
    """Mean accuracy of a frozen model over ``n_tasks`` target episodes."""
    report = evaluate_plain(model, arch, head_kind, target, spec, seed=seed, n_tasks=n_tasks)
    return SourceScore(name, report.mean_accuracy, report.n_tasks)


def select_sources(candidates, target: SourceDataset, s: int, spec: MetaSetSpec,
                   config: PlainConfig, n_tasks: int | None = None) -> tuple[list[str], list[SourceScore]]:
    """Top-``s`` candidate names by transfer accuracy to ``target``, plus every score.

    All candidates train with the same budget and seed and are scored on the
    same target episodes. Ties keep candidate order.
    """
    candidates = list(candidates)
    if s > len(candidates):
        raise ValueError(f"cannot select {s} sources from {len(candidates)} candidates")
    if s < 0:
        raise ValueError("s must be non-negative")
    n_tasks = spec.n_tasks if n_tasks is None else n_tasks
    scores = []
    for cand in candidates:
        model = train_source_metric_learner(cand, spec, config)
        scores.append(cross_source_accuracy(model, config.head_kind, target, spec, n_tasks,
                                            config.seed + 7919, config.arch, cand.name))
    order = sorted(range(len(scores)), key=lambda i: -scores[i].accuracy)
    return [scores[i].source_name for i in order[:s]], scores


def build_auxiliary(candidates, selected: list[str]) -> SourceDataset:
    """Class-union of the selected candidates, in selection order."""
    by_name = {c.name: c for c in candidates}
    return merge_sources([by_name[n] for n in selected], name="aux:" + "+".join(selected))


def scores_csv(scores: list[SourceScore], selected: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "accuracy", "n_tasks"])
    for sc in scores:
        w.writerow([sc.source_name, f"{sc.accuracy:.6f}", sc.n_tasks])
    buf.write("selected=" + ",".join(selected) + "\n")
    return buf.getvalue()
