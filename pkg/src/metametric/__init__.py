"""Meta-SGD over metric-based few-shot learners (Matching and Prototypical heads)."""

from .autodiff import Graph, GraphError, NonFiniteError, evaluate, finite_difference_check, gradient
from .embedding import ArchConfig, ParamSet, embed, init_params
from .episodes import (Episode, MetaSetSpec, SourceDataset, generate_synthetic_source, load_source,
                       sample_episode, save_source, split_support)
from .harness import EvalReport, evaluate_meta, finetune_baseline, train_plain_metric
from .meta import (MetaState, TrainConfig, TrainingLog, init_state, inner_adapt, meta_train_multi_source,
                   meta_train_single_source, meta_update)
from .multisource import select_sources

__version__ = "0.1.0"
