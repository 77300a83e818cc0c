"""Command line front end.

Subcommands cover the full workflow: ``generate`` a synthetic corpus,
``train`` a model on its train split, ``evaluate`` a checkpoint, ``rtf`` to
dump a remaining-lifetime trace, ``baseline`` for the reference predictors
and ``gradcheck`` for the analytic-gradient self-test. Exit codes: 0 on
success, 1 on usage errors, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from .evaluation import (ConstantMeanBaseline, LinearWindowBaseline,
                         evaluate, model_predictor, rtf_series, write_rtf_csv)
from .gradcheck import check_model_gradients
from .model import SlatConfig
from .training import TrainConfig, train, write_history
from .windowing import LabelConfig, build_dataset


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="slat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a run-to-failure corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", type=int, default=10,
                   help="trajectories per fault mode")
    p.add_argument("--n-stw", type=int, default=30)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--rul-cap", type=float, default=125.0)
    p.add_argument("--noise-scale", type=float, default=1.0)

    p = sub.add_parser("train", help="train a model on a corpus train split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--model-config", default=None,
                   help="JSON file overriding model config fields")

    p = sub.add_parser("evaluate", help="score a checkpoint per fault mode")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--json", default=None, help="also write report JSON here")

    p = sub.add_parser("rtf", help="remaining-lifetime trace over a trajectory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trajectory", default=None,
                   help="trajectory id (default: first test trajectory)")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("baseline", help="fit and score a reference predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=["constant", "linear"], required=True)
    p.add_argument("--json", default=None)

    p = sub.add_parser("gradcheck", help="analytic vs numeric gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-3)
    return parser


def _model_config_for(corpus, overrides_path) -> SlatConfig:
    fields = {"n_stw": corpus.n_stw, "n_channels": len(corpus.channels),
              "rul_cap": corpus.rul_cap}
    if overrides_path:
        with open(overrides_path, "r", encoding="utf-8") as fh:
            fields.update(json.load(fh))
    return SlatConfig(**fields)


def _cmd_generate(args) -> int:
    corpus = corpus_mod.generate_corpus(
        args.out, master_seed=args.seed, n_per_mode=args.trajectories,
        n_stw=args.n_stw, stride=args.stride, rul_cap=args.rul_cap,
        noise_scale=args.noise_scale)
    lengths = [t.n_steps for t in corpus.trajectories.values()]
    print(f"wrote {len(corpus.trajectories)} trajectories to {corpus.root}")
    print(f"modes: {', '.join(corpus.modes_present())}; "
          f"steps min/max: {min(lengths)}/{max(lengths)}; "
          f"train/test: {len(corpus.ids('train'))}/{len(corpus.ids('test'))}")
    return 0


def _cmd_train(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    model_cfg = _model_config_for(corpus, args.model_config)
    train_cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                            epochs=args.epochs, val_fraction=args.val_fraction,
                            seed=args.seed)
    samples = build_dataset(corpus.train_trajectories(), corpus.n_stw,
                            corpus.stride, corpus.label_config, corpus.stats)
    result = train(samples, model_cfg, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline = {
        "n_stw": corpus.n_stw, "stride": corpus.stride,
        "rul_cap": corpus.rul_cap, "channels": corpus.channels,
        "norm_stats": corpus.stats.to_dict(),
        "train_config": train_cfg.to_dict(),
        "corpus_master_seed": corpus.manifest["master_seed"],
        "best_epoch": result.best_epoch,
        "val_trajectories": result.val_ids,
    }
    ckpt.save_checkpoint(out / "model.ckpt", result.best_params, model_cfg, pipeline)
    write_history(out / "history.csv", result.history)
    print(f"trained on {len(samples)} windows "
          f"({len(corpus.ids('train'))} trajectories)")
    print(f"final train loss: {result.final_train_loss:.4f}")
    if result.val_ids:
        print(f"best val rmse: {result.best_val_rmse:.4f} "
              f"(epoch {result.best_epoch}, held out: {', '.join(result.val_ids)})")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def _load_predictor(path, corpus):
    params, model_cfg, pipeline = ckpt.load_checkpoint(path)
    if pipeline.get("n_stw", corpus.n_stw) != corpus.n_stw:
        raise ValueError(
            f"checkpoint was trained with n_stw={pipeline['n_stw']}, "
            f"corpus uses {corpus.n_stw}")
    if pipeline.get("channels") and pipeline["channels"] != corpus.channels:
        raise ValueError("checkpoint channel list does not match corpus")
    return model_predictor(params, model_cfg)


def _print_report(report, json_path) -> None:
    print(report.to_text())
    if json_path:
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _cmd_evaluate(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    predict = _load_predictor(args.checkpoint, corpus)
    report = evaluate(predict, corpus.subset(args.split), corpus.stats,
                      corpus.n_stw, corpus.stride, corpus.label_config)
    _print_report(report, args.json)
    return 0


def _cmd_rtf(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    predict = _load_predictor(args.checkpoint, corpus)
    tid = args.trajectory or corpus.ids("test")[0]
    if tid not in corpus.trajectories:
        raise ValueError(f"unknown trajectory id {tid!r}; "
                         f"have {', '.join(corpus.ids())}")
    series = rtf_series(predict, corpus.trajectories[tid], corpus.stats,
                        corpus.n_stw, corpus.label_config)
    write_rtf_csv(args.out, series)
    print(f"wrote {len(series.t)} rows for {tid} ({series.mode}) to {args.out}")
    return 0


def _cmd_baseline(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    samples = build_dataset(corpus.train_trajectories(), corpus.n_stw,
                            corpus.stride, corpus.label_config, corpus.stats)
    if args.kind == "constant":
        model = ConstantMeanBaseline(rul_cap=corpus.rul_cap).fit(samples)
    else:
        model = LinearWindowBaseline(rul_cap=corpus.rul_cap).fit(samples)
        if model.used_ridge:
            print("note: normal equations were singular, used ridge fallback")
    report = evaluate(model.predict, corpus.test_trajectories(), corpus.stats,
                      corpus.n_stw, corpus.stride, corpus.label_config)
    print(f"baseline: {args.kind}")
    _print_report(report, args.json)
    return 0


def _cmd_gradcheck(args) -> int:
    result = check_model_gradients(seed=args.seed, threshold=args.threshold)
    for name, err in result.worst(5):
        print(f"{name:<40s} {err:.3e}")
    print(f"max relative error: {result.max_rel_error:.3e} "
          f"(threshold {args.threshold:g}, {result.seconds:.1f}s)")
    if not result.passed:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    print("gradient check passed")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "rtf": _cmd_rtf,
    "baseline": _cmd_baseline,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"slat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
