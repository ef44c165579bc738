import numpy as np
import pytest
from hypothesis import given, strategies as st

from metametric.checkpoint import CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from metametric.config import ConfigError, RunConfig, format_config, parse_config
from metametric.embedding import ArchConfig
from metametric.meta import TrainConfig, init_state, meta_update


@given(st.integers(0, 1000), st.sampled_from(["matching", "prototypical"]),
       st.lists(st.integers(1, 6), min_size=0, max_size=2), st.floats(0.0, 0.5))
def test_checkpoint_roundtrip_bit_exact(seed, head, hidden, dropout):
    arch = ArchConfig(7, tuple(hidden), 3, dropout)
    state = init_state(arch, head, seed)
    rng = np.random.default_rng(seed)
    state = meta_update(state, state.theta0.map(lambda v: rng.normal(size=v.shape)),
                        state.alpha.map(lambda v: rng.normal(size=v.shape)), TrainConfig())
    back = loads(dumps(state))
    assert back.equals(state)


def test_checkpoint_file_roundtrip(tmp_path):
    state = init_state(ArchConfig(), "prototypical", 3)
    save_checkpoint(state, tmp_path / "s.mml")
    assert load_checkpoint(tmp_path / "s.mml").equals(state)
    assert (tmp_path / "s.mml").read_bytes()[:4] == b"MML1"


def test_checkpoint_corruption_detected():
    blob = dumps(init_state(ArchConfig(6, (3,), 2), "matching", 0))
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        loads(blob[:-10])
    with pytest.raises(CheckpointError):
        loads(blob + b"\0")


def test_config_defaults_and_echo_roundtrip():
    cfg = RunConfig()
    assert cfg.resolved_inner_steps == 7 and cfg.dropout == 0.1 and cfg.meta_batch == 4
    assert RunConfig(head="matching").resolved_inner_steps == 5
    custom = parse_config("head=matching  # comment\nhidden_dims=16,8\nfirst_order=true\nmeta_lr=0.002\n")
    assert custom.hidden_dims == (16, 8) and custom.first_order and custom.meta_lr == 0.002
    assert parse_config(format_config(custom)) == custom


@pytest.mark.parametrize("text", ["nosuchkey=1", "iterations=ten", "just words", "first_order=maybe",
                                  "head=linear"])
def test_config_strict(text):
    with pytest.raises(ConfigError):
        parse_config(text)
