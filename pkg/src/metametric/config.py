"""Flat ``key=value`` run configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .embedding import ArchConfig
from .episodes import MetaSetSpec
from .heads import HEAD_KINDS
from .meta import DEFAULT_INNER_STEPS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    head: str = "prototypical"
    # architecture
    hidden_dims: tuple = (32,)
    embed_dim: int = 16
    dropout: float = 0.1
    # meta-training; inner_steps of -1 means the head's default (5 matching, 7 prototypical)
    inner_steps: int = -1
    meta_batch: int = 4
    meta_lr: float = 0.001
    iterations: int = 1000
    first_order: bool = False
    eval_every: int = 100
    keep_best: bool = False
    # keep the state with the best *test* accuracy seen during training; this
    # peeks at the test set and exists only to reproduce that reporting protocol
    best_on_test: bool = False
    seed: int = 0
    # episodes
    train_n_way: int = 5
    train_k_shot: int = 2
    val_n_way: int = 5
    val_k_shot: int = 2
    val_tasks: int = 100
    test_n_way: int = 5
    test_k_shot: int = 2
    test_tasks: int = 600
    q_query: int = 15
    aux_n_way: int = 5
    aux_k_shot: int = 2
    aux_q_query: int = 5
    # baselines
    plain_lr: float = 0.05
    finetune_lr: float = 0.01
    # paths (empty = unset)
    data: str = ""
    val_data: str = ""
    test_data: str = ""
    aux: str = ""
    out: str = ""

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    @property
    def resolved_inner_steps(self) -> int:
        return DEFAULT_INNER_STEPS[self.head] if self.inner_steps < 0 else self.inner_steps

    def arch(self, input_dim: int) -> ArchConfig:
        return ArchConfig(input_dim, self.hidden_dims, self.embed_dim, self.dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(inner_steps=self.resolved_inner_steps, meta_batch=self.meta_batch,
                           meta_lr=self.meta_lr, iterations=self.iterations,
                           first_order=self.first_order, eval_every=self.eval_every,
                           seed=self.seed, keep_best=self.keep_best)

    def train_spec(self) -> MetaSetSpec:
        return MetaSetSpec(self.train_n_way, self.train_k_shot, self.q_query, self.iterations)

    def val_spec(self) -> MetaSetSpec:
        return MetaSetSpec(self.val_n_way, self.val_k_shot, self.q_query, self.val_tasks)

    def test_spec(self) -> MetaSetSpec:
        return MetaSetSpec(self.test_n_way, self.test_k_shot, self.q_query, self.test_tasks)

    def aux_spec(self) -> MetaSetSpec:
        return MetaSetSpec(self.aux_n_way, self.aux_k_shot, self.aux_q_query)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    default = _FIELDS[key].default
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = asdict(base) if base is not None else {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    """Effective-config echo; parsing it reproduces ``cfg``."""
    lines = []
    for name, value in asdict(cfg).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
