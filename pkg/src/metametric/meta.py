"""Meta-SGD over metric-based few-shot learners.

The meta-learner owns an initialization ``theta0`` for the embedding
network and a per-parameter step size ``alpha``. For each task the
embedding is adapted by a few ``theta <- theta - alpha * grad`` steps on an
inner loss, then scored on the task's query set; ``(theta0, alpha)`` are
trained by differentiating that score through the unrolled inner loop.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import heads
from .autodiff import Graph, NonFiniteError, Node
from .embedding import ArchConfig, ParamSet, as_parameters, embed, init_params, param_axpy
from .episodes import Episode, LabeledSamples, MetaSetSpec, SourceDataset, sample_episode, split_support

ALPHA_MIN, ALPHA_MAX = 1e-6, 1.0
ALPHA_INIT = (0.005, 0.1)
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
DEFAULT_INNER_STEPS = {"matching": 5, "prototypical": 7}


@dataclass
class TrainConfig:
    inner_steps: int = 5
    meta_batch: int = 4
    meta_lr: float = 1e-3
    iterations: int = 1000
    first_order: bool = False
    eval_every: int = 100
    seed: int = 0
    keep_best: bool = False

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.meta_batch < 1:
            raise ValueError("meta_batch must be >= 1")


@dataclass
class MetaState:
    theta0: ParamSet
    alpha: ParamSet
    head_kind: str
    arch: ArchConfig
    m_theta: ParamSet = None
    v_theta: ParamSet = None
    m_alpha: ParamSet = None
    v_alpha: ParamSet = None
    step: int = 0

    def __post_init__(self):
        if self.head_kind not in heads.HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if not self.alpha.same_layout(self.theta0):
            raise ValueError("alpha must have the same layout as theta0")
        for name in ("m_theta", "v_theta", "m_alpha", "v_alpha"):
            if getattr(self, name) is None:
                setattr(self, name, ParamSet.zeros_like(self.theta0))

    def equals(self, other: "MetaState") -> bool:
        return (self.head_kind == other.head_kind and self.arch == other.arch
                and self.step == other.step
                and all(getattr(self, n).equals(getattr(other, n))
                        for n in ("theta0", "alpha", "m_theta", "v_theta", "m_alpha", "v_alpha")))


def init_state(arch: ArchConfig, head_kind: str, seed: int = 0) -> MetaState:
    rng = np.random.default_rng([seed, 17])
    theta0 = init_params(arch, rng)
    alpha = theta0.map(lambda v: rng.uniform(*ALPHA_INIT, size=np.shape(v)))
    return MetaState(theta0=theta0, alpha=alpha, head_kind=head_kind, arch=arch)


def task_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, iteration, task) so results ignore execution order."""
    return np.random.default_rng([seed, *keys])


# -- losses --------------------------------------------------------------------

def episode_loss(theta: ParamSet, arch: ArchConfig, head_kind: str,
                 support: LabeledSamples, query: LabeledSamples,
                 train: bool = False, rng: np.random.Generator | None = None) -> tuple[Node, Node]:
    """Mean cross-entropy of head predictions for ``query`` given ``support``.

    ``theta`` holds graph nodes. Returns (loss, probabilities).
    """
    if len(support) == 0 or len(query) == 0:
        raise ValueError("support and query sets must be non-empty")
    g = next(iter(theta.values())).graph
    n_s = len(support)
    x = np.concatenate([support.x, query.x])
    z = embed(theta, x, arch, train=train, rng=rng)
    zs, zq = g.take(z, 0, n_s), g.take(z, n_s, z.shape[0])
    n_classes = max(support.n_classes, query.n_classes)
    probs = heads.predict(head_kind, zs, support.y, n_classes, zq)
    return heads.cross_entropy(probs, query.y), probs


def inner_adapt(state: MetaState, support: LabeledSamples, query: LabeledSamples, n_steps: int,
                rng: np.random.Generator | None = None, *, train: bool = False,
                create_graph: bool = False, first_order: bool = False,
                params: tuple[ParamSet, ParamSet] | None = None) -> ParamSet:
    """Run ``n_steps`` Meta-SGD updates starting from ``theta0``.

    Without ``create_graph`` everything is numeric and the adapted arrays are
    returned; ``params`` may override ``(theta0, alpha)`` with arrays. With
    ``create_graph``, ``params`` must hold graph nodes for ``(theta0, alpha)``
    and the result is a ParamSet of nodes that stays differentiable w.r.t.
    them. ``first_order`` treats each inner gradient as a constant.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if len(support) == 0 or len(query) == 0:
        raise ValueError("inner support and query sets must be non-empty")
    theta, alpha = params if params is not None else (state.theta0, state.alpha)
    if create_graph:
        if not isinstance(next(iter(theta.values())), Node):
            raise TypeError("create_graph needs graph-node params; see as_parameters")
        g = next(iter(theta.values())).graph
        for _ in range(n_steps):
            loss, _ = episode_loss(theta, state.arch, state.head_kind, support, query, train, rng)
            grads = g.backward(loss, list(theta.values()), create_graph=True)
            if first_order:
                grads = [g.stop_gradient(v) for v in grads]
            theta = param_axpy(theta, ParamSet(dict(zip(theta.names(), grads))), alpha)
        return theta
    for step in range(n_steps):
        theta = param_axpy(theta, _numeric_grad(theta, state, support, query, train, rng, step), alpha)
    return theta


def _numeric_grad(theta, state, support, query, train, rng, step=None):
    g = Graph()
    nodes, bindings = as_parameters(g, theta)
    loss, _ = episode_loss(nodes, state.arch, state.head_kind, support, query, train, rng)
    try:
        g.evaluate(bindings)
    except NonFiniteError as exc:
        where = f" at inner step {step}" if step is not None else ""
        raise NonFiniteError(f"non-finite inner loss{where}: {exc}") from exc
    grads = g.backward(loss, list(nodes.values()))
    return ParamSet(dict(zip(theta.names(), grads)))


@dataclass
class TaskLoss:
    graph: Graph
    loss: Node
    accuracy: float
    theta0: ParamSet
    alpha: ParamSet
    probs: Node


def inner_sets(episode: Episode, rng, aux_episode: Episode | None = None):
    """(inner support, inner query): halves of the support set, or an auxiliary task."""
    if aux_episode is not None:
        return aux_episode.support, aux_episode.query
    return split_support(episode, rng)


def task_meta_loss(state: MetaState, episode: Episode, config: TrainConfig,
                   rng: np.random.Generator, aux_episode: Episode | None = None) -> TaskLoss:
    """Post-adaptation query loss for one task, built on a fresh evaluated graph."""
    g = Graph()
    theta, bind_t = as_parameters(g, state.theta0, "theta/")
    alpha, bind_a = as_parameters(g, state.alpha, "alpha/")
    inner_s, inner_q = inner_sets(episode, rng, aux_episode)
    adapted = inner_adapt(state, inner_s, inner_q, config.inner_steps, rng, train=True,
                          create_graph=True, first_order=config.first_order, params=(theta, alpha))
    loss, probs = episode_loss(adapted, state.arch, state.head_kind, episode.support, episode.query)
    g.evaluate({**bind_t, **bind_a})
    acc = heads.accuracy(probs.value, episode.query_y)
    return TaskLoss(g, loss, acc, theta, alpha, probs)


def task_meta_gradient(state, episode, config, rng, aux_episode=None):
    """Returns (loss, accuracy, d loss/d theta0, d loss/d alpha)."""
    t = task_meta_loss(state, episode, config, rng, aux_episode)
    wrt = list(t.theta0.values()) + list(t.alpha.values())
    grads = t.graph.backward(t.loss, wrt)
    n = len(t.theta0)
    names = state.theta0.names()
    return (float(t.loss.value), t.accuracy,
            ParamSet(dict(zip(names, grads[:n]))), ParamSet(dict(zip(names, grads[n:]))))


# -- outer loop -------------------------------------------------------------------

def _adam(param, grad, m, v, lr, t):
    out_p, out_m, out_v = {}, {}, {}
    for k in param:
        mk = ADAM_B1 * m[k] + (1 - ADAM_B1) * grad[k]
        vk = ADAM_B2 * v[k] + (1 - ADAM_B2) * grad[k] * grad[k]
        m_hat = mk / (1 - ADAM_B1 ** t)
        v_hat = vk / (1 - ADAM_B2 ** t)
        out_p[k] = param[k] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        out_m[k], out_v[k] = mk, vk
    return ParamSet(out_p), ParamSet(out_m), ParamSet(out_v)


def meta_update(state: MetaState, grad_theta: ParamSet, grad_alpha: ParamSet,
                config: TrainConfig) -> MetaState:
    """One Adam step on (theta0, alpha); alpha is clamped to [1e-6, 1]."""
    for name, grads in (("theta0", grad_theta), ("alpha", grad_alpha)):
        if not all(np.isfinite(v).all() for v in grads.values()):
            raise NonFiniteError(f"non-finite meta-gradient for {name}")
    t = state.step + 1
    theta0, m_t, v_t = _adam(state.theta0, grad_theta, state.m_theta, state.v_theta, config.meta_lr, t)
    alpha, m_a, v_a = _adam(state.alpha, grad_alpha, state.m_alpha, state.v_alpha, config.meta_lr, t)
    alpha = alpha.map(lambda a: np.clip(a, ALPHA_MIN, ALPHA_MAX))
    return replace(state, theta0=theta0, alpha=alpha, m_theta=m_t, v_theta=v_t,
                   m_alpha=m_a, v_alpha=v_a, step=t)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)  # (iter, meta_loss, val_acc, ci95)
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "meta_loss", "val_acc", "ci95"])
        for it, loss, acc, ci in self.rows:
            w.writerow([it, repr(float(loss)), repr(float(acc)), repr(float(ci))])
        return buf.getvalue()

    def smoothed_loss(self, window: int = 50) -> np.ndarray:
        """Trailing moving average; entry i averages losses[max(0, i-window+1) : i+1]."""
        x = np.asarray(self.losses)
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, x.size + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)


def _meta_train(train_source, train_spec, state, config, val_source, val_spec,
                aux=None, aux_spec=None):
    from .harness import evaluate_meta

    log = TrainingLog()
    best = (-np.inf, state)
    window: list[float] = []
    for it in range(config.iterations):
        g_theta = ParamSet.zeros_like(state.theta0)
        g_alpha = ParamSet.zeros_like(state.alpha)
        losses, accs = [], []
        for b in range(config.meta_batch):
            rng = task_rng(config.seed, it, b)
            episode = sample_episode(train_source, train_spec, rng)
            aux_episode = sample_episode(aux, aux_spec, rng) if aux is not None else None
            loss, acc, gt, ga = task_meta_gradient(state, episode, config, rng, aux_episode)
            g_theta = ParamSet({k: g_theta[k] + gt[k] for k in g_theta})
            g_alpha = ParamSet({k: g_alpha[k] + ga[k] for k in g_alpha})
            losses.append(loss)
            accs.append(acc)
        scale = 1.0 / config.meta_batch
        state = meta_update(state, g_theta.map(lambda v: v * scale), g_alpha.map(lambda v: v * scale), config)
        log.losses.append(float(np.mean(losses)))
        log.accuracies.append(float(np.mean(accs)))
        window.append(log.losses[-1])
        if config.eval_every > 0 and (it + 1) % config.eval_every == 0:
            val_acc = ci = float("nan")
            if val_spec is not None:
                report = evaluate_meta(state, val_source or train_source, val_spec, config,
                                       seed=config.seed + 1_000_003, aux=aux, aux_spec=aux_spec)
                val_acc, ci = report.mean_accuracy, report.ci95
                if config.keep_best and val_acc > best[0]:
                    best = (val_acc, state)
            log.rows.append((it + 1, float(np.mean(window)), val_acc, ci))
            window = []
    if config.keep_best and best[0] > -np.inf:
        state = best[1]
    return state, log


def meta_train_single_source(train_source: SourceDataset, train_spec: MetaSetSpec, state: MetaState,
                             config: TrainConfig, val_source: SourceDataset | None = None,
                             val_spec: MetaSetSpec | None = None) -> tuple[MetaState, TrainingLog]:
    """Meta-train on tasks whose support sets are split in two for the inner loop."""
    if train_spec.k_shot < 2:
        raise ValueError("single-source meta-training needs k >= 2; use meta_train_multi_source for 1-shot")
    return _meta_train(train_source, train_spec, state, config, val_source, val_spec)


def meta_train_multi_source(train_source: SourceDataset, train_spec: MetaSetSpec, aux: SourceDataset,
                            aux_spec: MetaSetSpec, state: MetaState, config: TrainConfig,
                            val_source: SourceDataset | None = None,
                            val_spec: MetaSetSpec | None = None) -> tuple[MetaState, TrainingLog]:
    """Meta-train with inner loops driven by tasks drawn from an auxiliary source.

    Auxiliary tasks may have a different class count from the target tasks.
    """
    return _meta_train(train_source, train_spec, state, config, val_source, val_spec, aux, aux_spec)
