"""Command-line entry point: ``metametric <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config, parse_config
from .episodes import generate_synthetic_source, load_source, save_source
from .harness import (PlainConfig, append_report, evaluate_finetune, evaluate_meta, evaluate_plain,
                      train_plain_metric)
from .meta import init_state, meta_train_multi_source, meta_train_single_source
from .multisource import build_auxiliary, scores_csv, select_sources

log = logging.getLogger("metametric")

MODEL_NAMES = {("meta", "matching"): "MMN", ("meta", "prototypical"): "MPN",
               ("plain", "matching"): "MN", ("plain", "prototypical"): "PN",
               ("finetune", "matching"): "MN-finetune", ("finetune", "prototypical"): "PN-finetune"}


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_data(args) -> int:
    src = generate_synthetic_source(args.family_seed, args.classes, args.per_class, args.size,
                                    args.noise, unrelated=args.unrelated, class_seed=args.class_seed,
                                    max_shift=args.max_shift, name=args.name)
    save_source(src, args.out)
    print(f"wrote {src.n_classes} classes x {args.per_class} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_path, out_path = args.data or cfg.data, args.out or cfg.out
    if not data_path or not out_path:
        raise ValueError("train needs --data and --out (or data= and out= in the config)")
    data = load_source(data_path)
    val = load_source(cfg.val_data) if cfg.val_data else None
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    state = init_state(cfg.arch(data.input_dim), cfg.head, cfg.seed)
    tc = cfg.train_config()
    val_spec = cfg.val_spec() if cfg.eval_every > 0 else None
    if cfg.best_on_test:
        test_path = args.test_data or cfg.test_data
        if not test_path or cfg.eval_every <= 0:
            raise ValueError("best_on_test needs test data (--test-data or test_data=) and eval_every > 0")
        log.warning("best_on_test: selecting the checkpoint on test accuracy; reported test numbers are optimistic")
        val, val_spec = load_source(test_path), cfg.test_spec()
        tc.keep_best = True
    if args.multi_source:
        aux_path = args.aux or cfg.aux
        if not aux_path:
            raise ValueError("--multi-source needs --aux")
        aux = load_source(aux_path)
        state, tlog = meta_train_multi_source(data, cfg.train_spec(), aux, cfg.aux_spec(), state, tc,
                                              val_source=val, val_spec=val_spec)
    else:
        state, tlog = meta_train_single_source(data, cfg.train_spec(), state, tc,
                                               val_source=val, val_spec=val_spec)
    save_checkpoint(state, out / "state.mml")
    _write_atomic(out / "train_log.csv", tlog.to_csv())
    _write_atomic(out / "config.txt", format_config(cfg))
    print(f"trained {cfg.iterations} iterations; final meta-loss "
          f"{tlog.losses[-1] if tlog.losses else float('nan'):.4f}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = _load_config(args)
    cfg.head = state.head_kind
    data = load_source(args.data)
    aux = load_source(args.aux) if args.aux else None
    spec = cfg.test_spec()
    spec = type(spec)(args.n_way or spec.n_classes, args.k_shot or spec.k_shot, spec.q_query,
                      args.episodes or spec.n_tasks)
    report = evaluate_meta(state, data, spec, cfg.train_config(), seed=cfg.seed,
                           aux=aux, aux_spec=cfg.aux_spec() if aux else None)
    name = MODEL_NAMES[("meta", state.head_kind)]
    print(f"{name} {spec.n_classes}-way {spec.k_shot}-shot: {report.mean_accuracy:.4f} "
          f"+/- {report.ci95:.4f} over {report.n_tasks} tasks")
    if args.results:
        append_report(args.results, name, cfg.train_n_way, spec.n_classes, spec.k_shot, report)
    return 0


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    data = load_source(args.data)
    test = load_source(args.test_data) if args.test_data else data
    arch = cfg.arch(data.input_dim)
    pc = PlainConfig(cfg.head, arch, cfg.iterations, cfg.plain_lr, cfg.seed)
    theta = train_plain_metric(data, cfg.train_spec(), cfg.head, pc)
    spec = cfg.test_spec()
    if args.episodes:
        spec = type(spec)(spec.n_classes, spec.k_shot, spec.q_query, args.episodes)
    if args.kind == "plain":
        report = evaluate_plain(theta, arch, cfg.head, test, spec, seed=cfg.seed)
    else:
        report = evaluate_finetune(theta, arch, cfg.head, test, spec, cfg.resolved_inner_steps,
                                   cfg.finetune_lr, seed=cfg.seed)
    name = MODEL_NAMES[(args.kind, cfg.head)]
    print(f"{name} {spec.n_classes}-way {spec.k_shot}-shot: {report.mean_accuracy:.4f} "
          f"+/- {report.ci95:.4f} over {report.n_tasks} tasks")
    if args.results:
        append_report(args.results, name, cfg.train_n_way, spec.n_classes, spec.k_shot, report)
    return 0


def cmd_select_sources(args) -> int:
    cfg = _load_config(args)
    target = load_source(args.target)
    candidates = [load_source(c) for c in args.candidate]
    arch = cfg.arch(target.input_dim)
    spec = type(cfg.train_spec())(cfg.train_n_way, cfg.train_k_shot, cfg.q_query, args.tasks)
    pc = PlainConfig(cfg.head, arch, args.iterations or cfg.iterations, cfg.plain_lr, cfg.seed)
    selected, scores = select_sources(candidates, target, args.top, spec, pc)
    text = scores_csv(scores, selected)
    sys.stdout.write(text)
    if args.out:
        _write_atomic(Path(args.out), text)
    if args.aux_out:
        save_source(build_auxiliary(candidates, selected), args.aux_out)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.seed or 0)
    worst = 0.0
    for name, err in results.items():
        worst = max(worst, err)
        flag = "ok" if err <= gradcheck.TOLERANCE else "FAIL"
        print(f"{name:28s} {err:.3e}  {flag}")
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:g})")
    return 0 if worst <= gradcheck.TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metametric", description="Meta-SGD over metric-based few-shot learners")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic glyph source")
    g.add_argument("--out", required=True)
    g.add_argument("--family-seed", type=int, default=7)
    g.add_argument("--class-seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--per-class", type=int, default=40)
    g.add_argument("--size", type=int, default=8)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--max-shift", type=int, default=1)
    g.add_argument("--unrelated", action="store_true")
    g.add_argument("--name")
    g.add_argument("--seed", type=int, help="accepted for uniformity; generation is seeded by --family-seed/--class-seed")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="meta-train a Meta-Metric-Learner")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--aux")
    t.add_argument("--multi-source", action="store_true")
    t.add_argument("--out")
    t.add_argument("--test-data", help="test source for best_on_test=true")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on test episodes")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--aux")
    e.add_argument("--n-way", type=int)
    e.add_argument("--k-shot", type=int)
    e.add_argument("--episodes", type=int)
    e.add_argument("--results")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("select-sources", help="rank candidate auxiliary sources")
    s.add_argument("--target", required=True)
    s.add_argument("--candidate", action="append", required=True)
    s.add_argument("--top", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--iterations", type=int)
    s.add_argument("--tasks", type=int, default=100)
    s.add_argument("--out")
    s.add_argument("--aux-out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_select_sources)

    c = sub.add_parser("gradcheck", help="finite-difference suite")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("baseline", help="train and evaluate a plain or fine-tuned metric learner")
    b.add_argument("--kind", choices=("plain", "finetune"), required=True)
    b.add_argument("--config")
    b.add_argument("--data", required=True)
    b.add_argument("--test-data")
    b.add_argument("--episodes", type=int)
    b.add_argument("--results")
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_baseline)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
