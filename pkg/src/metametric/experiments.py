"""Desk-scale experiment fixtures and runners shared by scripts/ and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import ArchConfig, init_params
from .episodes import MetaSetSpec, SourceDataset, generate_synthetic_source
from .harness import EvalReport, PlainConfig, evaluate_finetune, evaluate_meta, evaluate_plain, train_plain_metric
from .meta import DEFAULT_INNER_STEPS, TrainConfig, TrainingLog, init_state, meta_train_multi_source, meta_train_single_source
from .multisource import select_sources


@dataclass
class Fixture:
    train: SourceDataset
    val: SourceDataset
    test: SourceDataset


def standard_fixture(family_seed: int = 7, n_train: int = 40, n_val: int = 10, n_test: int = 20,
                     per_class: int = 40, image_size: int = 8, noise_rate: float = 0.05) -> Fixture:
    """One glyph family split into class-disjoint train/val/test sources."""
    total = n_train + n_val + n_test
    src = generate_synthetic_source(family_seed, total, per_class, image_size, noise_rate)
    cut1, cut2 = n_train, n_train + n_val
    return Fixture(
        train=SourceDataset(f"{src.name}-train", image_size, src.classes[:cut1]),
        val=SourceDataset(f"{src.name}-val", image_size, src.classes[cut1:cut2]),
        test=SourceDataset(f"{src.name}-test", image_size, src.classes[cut2:]),
    )


MODELS = ("MN", "MMN", "PN", "MPN")
HEAD_OF = {"MN": "matching", "MMN": "matching", "PN": "prototypical", "MPN": "prototypical",
           "MN-ft": "matching", "PN-ft": "prototypical"}


@dataclass
class TableConfig:
    iterations: int = 1000
    n_test_tasks: int = 600
    plain_lr: float = 0.05
    finetune_lr: float = 0.01
    seed: int = 0
    settings: tuple = ((5, 3), (3, 5))
    shots: tuple = (2, 4)
    with_finetune: bool = False
    arch: ArchConfig = field(default_factory=ArchConfig)


def flexible_class_table(fx: Fixture, cfg: TableConfig, progress=None) -> dict:
    """Accuracy of every model for each (train N, test N) setting and shot count.

    Returns ``{(model, n_train, n_test, k): EvalReport}``. Meta models and plain
    baselines get the same iteration budget; all share the same test episodes.
    """
    results: dict = {}
    for n_train, n_test in cfg.settings:
        for k in cfg.shots:
            train_spec = MetaSetSpec(n_train, k)
            test_spec = MetaSetSpec(n_test, k, n_tasks=cfg.n_test_tasks)
            test_seed = cfg.seed + 555
            for model in MODELS:
                head = HEAD_OF[model]
                steps = DEFAULT_INNER_STEPS[head]
                if model in ("MMN", "MPN"):
                    state = init_state(cfg.arch, head, cfg.seed)
                    tc = TrainConfig(inner_steps=steps, iterations=cfg.iterations, eval_every=0, seed=cfg.seed)
                    state, _ = meta_train_single_source(fx.train, train_spec, state, tc)
                    report = evaluate_meta(state, fx.test, test_spec, tc, seed=test_seed)
                else:
                    pc = PlainConfig(head, cfg.arch, cfg.iterations, cfg.plain_lr, cfg.seed)
                    theta = train_plain_metric(fx.train, train_spec, head, pc)
                    report = evaluate_plain(theta, cfg.arch, head, fx.test, test_spec, seed=test_seed)
                    if cfg.with_finetune:
                        ft = evaluate_finetune(theta, cfg.arch, head, fx.test, test_spec, steps,
                                               cfg.finetune_lr, seed=test_seed)
                        results[(model + "-ft", n_train, n_test, k)] = ft
                results[(model, n_train, n_test, k)] = report
                if progress:
                    progress(model, n_train, n_test, k, report)
    return results


def training_curves(fx: Fixture, iterations: int = 500, seed: int = 0, k_shot: int = 2,
                    n_way: int = 5, arch: ArchConfig | None = None) -> dict[str, TrainingLog]:
    """Per-iteration meta-training losses for MMN and MPN."""
    arch = arch or ArchConfig()
    logs = {}
    for model in ("MMN", "MPN"):
        head = HEAD_OF[model]
        state = init_state(arch, head, seed)
        tc = TrainConfig(inner_steps=DEFAULT_INNER_STEPS[head], iterations=iterations, eval_every=0, seed=seed)
        _, logs[model] = meta_train_single_source(fx.train, MetaSetSpec(n_way, k_shot), state, tc)
    return logs


@dataclass
class RelatednessFixture:
    target: SourceDataset
    candidates: list
    related_name: str


def relatedness_fixture(seed: int = 0, n_classes: int = 20, per_class: int = 30,
                        noise_rate: float = 0.05) -> RelatednessFixture:
    """A glyph target source, one related candidate (same family), two unrelated noise sources."""
    family = 100 + seed
    target = generate_synthetic_source(family, n_classes, per_class, noise_rate=noise_rate,
                                       class_seed=1, name=f"target-{seed}")
    related = generate_synthetic_source(family, n_classes, per_class, noise_rate=noise_rate,
                                        class_seed=2, name=f"related-{seed}")
    unrelated = [generate_synthetic_source(family + 1000 * (i + 1), n_classes, per_class,
                                           noise_rate=noise_rate, unrelated=True, class_seed=3 + i,
                                           name=f"unrelated{i}-{seed}")
                 for i in range(2)]
    return RelatednessFixture(target, [unrelated[0], related, unrelated[1]], related.name)


def select_related(rf: RelatednessFixture, s: int = 1, iterations: int = 300, seed: int = 0,
                   n_tasks: int = 100, arch: ArchConfig | None = None):
    arch = arch or ArchConfig()
    spec = MetaSetSpec(5, 1, n_tasks=n_tasks)
    config = PlainConfig("prototypical", arch, iterations, 0.05, seed)
    return select_sources(rf.candidates, rf.target, s, spec, config)


def multisource_oneshot(rf: RelatednessFixture, head: str = "prototypical", iterations: int = 300,
                        seed: int = 0, n_test_tasks: int = 600, n_way: int = 5,
                        arch: ArchConfig | None = None) -> tuple[EvalReport, EvalReport]:
    """(untrained, meta-trained) 1-shot accuracy on held-out target classes.

    The target source's classes are split in half: meta-training tasks come
    from the first half, test tasks from the second. The inner loop runs on
    auxiliary tasks from the selected related source.
    """
    arch = arch or ArchConfig()
    half = rf.target.n_classes // 2
    tgt_train = SourceDataset(rf.target.name + "-train", rf.target.image_size, rf.target.classes[:half])
    tgt_test = SourceDataset(rf.target.name + "-test", rf.target.image_size, rf.target.classes[half:])
    aux = next(c for c in rf.candidates if c.name == rf.related_name)
    aux_spec = MetaSetSpec(5, 2, q_query=5)
    train_spec = MetaSetSpec(n_way, 1)
    test_spec = MetaSetSpec(n_way, 1, n_tasks=n_test_tasks)
    state0 = init_state(arch, head, seed)
    tc = TrainConfig(inner_steps=DEFAULT_INNER_STEPS[head], iterations=iterations, eval_every=0, seed=seed)
    state, _ = meta_train_multi_source(tgt_train, train_spec, aux, aux_spec, state0, tc)
    before = evaluate_meta(state0, tgt_test, test_spec, tc, seed=seed + 999, aux=aux, aux_spec=aux_spec)
    after = evaluate_meta(state, tgt_test, test_spec, tc, seed=seed + 999, aux=aux, aux_spec=aux_spec)
    return before, after


def untrained_report(arch: ArchConfig, head: str, source: SourceDataset, spec: MetaSetSpec,
                     seed: int = 0) -> EvalReport:
    theta = init_params(arch, np.random.default_rng([seed, 17]))
    return evaluate_plain(theta, arch, head, source, spec, seed=seed)


__all__ = [
    "Fixture", "standard_fixture", "TableConfig", "flexible_class_table", "training_curves",
    "RelatednessFixture", "relatedness_fixture", "select_related", "multisource_oneshot",
    "untrained_report", "MODELS",
]
