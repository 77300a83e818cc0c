#!/usr/bin/env python3
"""Full workflow in one go: simulate, train, evaluate, export one trace.

Writes everything under --workdir:
    corpus/      simulated trajectories + manifest
    run/         checkpoint + training history
    report.json  per-mode test RMSE
    rtf.csv      remaining-lifetime trace of the first test trajectory
"""

import argparse
import json
import sys
from pathlib import Path

from slat.checkpoint import save_checkpoint
from slat.corpus import generate_corpus
from slat.evaluation import (ConstantMeanBaseline, LinearWindowBaseline,
                             evaluate, model_predictor, rtf_series,
                             write_rtf_csv)
from slat.model import SlatConfig
from slat.training import TrainConfig, train, write_history
from slat.windowing import build_dataset


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--workdir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-stride", type=int, default=2,
                   help="window stride for the training set")
    p.add_argument("--model-config", default=None,
                   help="JSON file of model config overrides")
    return p.parse_args()


def main():
    args = parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    print("== generating corpus ==", flush=True)
    corpus = generate_corpus(work / "corpus", master_seed=args.seed,
                             n_per_mode=args.trajectories)
    print(f"{len(corpus.trajectories)} trajectories, "
          f"{len(corpus.ids('train'))} train / {len(corpus.ids('test'))} test")

    overrides = {}
    if args.model_config:
        overrides = json.loads(Path(args.model_config).read_text())
    cfg = SlatConfig(n_stw=corpus.n_stw, n_channels=len(corpus.channels),
                     rul_cap=corpus.rul_cap, **overrides)

    print("== training ==", flush=True)
    samples = build_dataset(corpus.train_trajectories(), corpus.n_stw,
                            args.train_stride, corpus.label_config, corpus.stats)
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       epochs=args.epochs, seed=args.seed)
    result = train(samples, cfg, tcfg)
    for row in result.history:
        print(f"epoch {row.epoch:3d}  loss {row.train_loss:10.2f}  "
              f"val rmse {row.val_rmse:7.2f}  {row.seconds:5.1f}s", flush=True)

    run_dir = work / "run"
    run_dir.mkdir(exist_ok=True)
    save_checkpoint(run_dir / "model.ckpt", result.best_params, cfg,
                    {"n_stw": corpus.n_stw, "stride": args.train_stride,
                     "rul_cap": corpus.rul_cap, "channels": corpus.channels,
                     "norm_stats": corpus.stats.to_dict()})
    write_history(run_dir / "history.csv", result.history)

    print("== evaluating ==", flush=True)
    test_trajs = corpus.test_trajectories()
    report = evaluate(model_predictor(result.best_params, cfg), test_trajs,
                      corpus.stats, corpus.n_stw, 1, corpus.label_config)
    print(report.to_text())
    for name, baseline in (
            ("constant", ConstantMeanBaseline(rul_cap=corpus.rul_cap)),
            ("linear", LinearWindowBaseline(rul_cap=corpus.rul_cap))):
        b_report = evaluate(baseline.fit(samples).predict, test_trajs,
                            corpus.stats, corpus.n_stw, 1, corpus.label_config)
        print(f"{name} baseline average: {b_report.average:.2f}")
    (work / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")

    series = rtf_series(model_predictor(result.best_params, cfg),
                        test_trajs[0], corpus.stats, corpus.n_stw,
                        corpus.label_config)
    write_rtf_csv(work / "rtf.csv", series)
    print(f"trace for {series.traj_id} -> {work / 'rtf.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
