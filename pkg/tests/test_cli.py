import csv

from metametric.checkpoint import load_checkpoint
from metametric.cli import run
from metametric.config import parse_config
from metametric.episodes import load_source


def test_gen_data(tmp_path):
    out = tmp_path / "d"
    assert run(["gen-data", "--out", str(out), "--family-seed", "7", "--classes", "20",
                "--per-class", "40", "--size", "8"]) == 0
    assert (out / "manifest").is_file()
    assert len(list(out.glob("class_*.csv"))) == 20
    assert load_source(out).n_classes == 20


def test_unknown_command_is_usage_error(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    assert run(["eval", "--ckpt", str(tmp_path / "missing"), "--data", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_train_eval_baseline_pipeline(tmp_path):
    d, run_dir = tmp_path / "d", tmp_path / "run"
    assert run(["gen-data", "--out", str(d), "--classes", "8", "--per-class", "20"]) == 0
    cfg = tmp_path / "c.txt"
    cfg.write_text("head=matching\niterations=4\neval_every=2\nval_tasks=3\ninner_steps=1\nq_query=5\n")
    assert run(["train", "--config", str(cfg), "--data", str(d), "--out", str(run_dir)]) == 0
    state = load_checkpoint(run_dir / "state.mml")
    assert state.step == 4 and state.head_kind == "matching"
    assert (run_dir / "train_log.csv").read_text().startswith("iter,meta_loss,val_acc,ci95\n")
    assert parse_config((run_dir / "config.txt").read_text()).iterations == 4
    results = tmp_path / "r.csv"
    assert run(["eval", "--ckpt", str(run_dir / "state.mml"), "--data", str(d), "--n-way", "3",
                "--episodes", "4", "--results", str(results)]) == 0
    assert run(["baseline", "--kind", "plain", "--config", str(cfg), "--data", str(d), "--episodes", "3",
                "--results", str(results)]) == 0
    rows = list(csv.reader(results.open()))
    assert [r[0] for r in rows[1:]] == ["MMN", "MN"]
    assert rows[1][2] == "3"


def test_multi_source_train_needs_aux(tmp_path):
    d = tmp_path / "d"
    run(["gen-data", "--out", str(d), "--classes", "6", "--per-class", "20"])
    assert run(["train", "--data", str(d), "--out", str(tmp_path / "o"), "--multi-source"]) == 1


def test_select_sources(tmp_path, capsys):
    t, a, b = tmp_path / "t", tmp_path / "a", tmp_path / "b"
    run(["gen-data", "--out", str(t), "--classes", "8", "--per-class", "20", "--class-seed", "1"])
    run(["gen-data", "--out", str(a), "--classes", "8", "--per-class", "20", "--class-seed", "2"])
    run(["gen-data", "--out", str(b), "--classes", "8", "--per-class", "20", "--unrelated"])
    capsys.readouterr()
    out = tmp_path / "scores.csv"
    assert run(["select-sources", "--target", str(t), "--candidate", str(b), "--candidate", str(a),
                "--top", "1", "--iterations", "30", "--tasks", "10", "--out", str(out),
                "--aux-out", str(tmp_path / "aux")]) == 0
    assert out.read_text().splitlines()[0] == "source,accuracy,n_tasks"
    assert load_source(tmp_path / "aux").n_classes == 8


def test_best_on_test_requires_test_data(tmp_path):
    d = tmp_path / "d"
    run(["gen-data", "--out", str(d), "--classes", "8", "--per-class", "20"])
    cfg = tmp_path / "c.txt"
    cfg.write_text("best_on_test=true\niterations=2\neval_every=1\ninner_steps=1\nq_query=3\ntest_tasks=2\n")
    assert run(["train", "--config", str(cfg), "--data", str(d), "--out", str(tmp_path / "o")]) == 1
    assert run(["train", "--config", str(cfg), "--data", str(d), "--test-data", str(d),
                "--out", str(tmp_path / "o")]) == 0
