#!/usr/bin/env python3
"""Memorization probe: drive train RMSE on a tiny sample set toward zero.

A model with healthy capacity and a correct training loop must be able to
memorize a handful of windows. Useful as a quick sanity check after touching
the model or the optimizer.
"""

import argparse
import sys
import time

import numpy as np

from slat.model import SlatConfig
from slat.simulator import MODE_BASE_RATE, SimConfig, simulate_trajectory
from slat.training import TrainConfig, train
from slat.windowing import (FaultMode, LabelConfig, build_dataset,
                            collect_descriptors, fit_norm_stats)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--target-rmse", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    trajs = []
    for i, mode in enumerate(FaultMode):
        cfg = SimConfig(mode=mode, drift_rate_bounds=(
            1.8 * MODE_BASE_RATE[mode], 2.0 * MODE_BASE_RATE[mode]))
        trajs.append(simulate_trajectory(cfg, (args.seed, i), traj_id=f"m{i}"))
    stats = fit_norm_stats(trajs, collect_descriptors(trajs, 30, 1))
    samples = build_dataset(trajs, 30, 1, LabelConfig(), stats)
    rng = np.random.default_rng(args.seed)
    picks = rng.choice(len(samples), size=args.samples, replace=False)
    subset = [samples[i] for i in sorted(picks)]

    model_cfg = SlatConfig(dropout=0.0)
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.samples,
                       epochs=args.epochs, val_fraction=0.0, seed=args.seed,
                       stop_train_rmse=args.target_rmse)
    t0 = time.perf_counter()
    result = train(subset, model_cfg, tcfg)
    elapsed = time.perf_counter() - t0
    final_rmse = float(np.sqrt(result.history[-1].train_loss))
    print(f"{len(result.history)} epochs in {elapsed:.1f}s, "
          f"train rmse {final_rmse:.3f} (target {args.target_rmse})")
    return 0 if final_rmse < args.target_rmse else 1


if __name__ == "__main__":
    sys.exit(main())
