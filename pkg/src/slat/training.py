"""Mini-batch training with Adam, gradient clipping and best-val tracking.

Everything that consumes randomness (trajectory-level validation split,
epoch shuffles, dropout) draws from one generator seeded by TrainConfig, so
a fixed (dataset, config) pair reproduces the run exactly. Wall-clock
seconds in the history are the only non-reproducible output.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .layers import global_norm
from .model import SlatConfig, backward, forward, init_params, predict_rul, stack_samples


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""

    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0
    stop_train_rmse: float | None = None

    def __post_init__(self):
        if not (0 < self.learning_rate):
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0 <= self.val_fraction < 1):
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "clip_norm": self.clip_norm,
            "val_fraction": self.val_fraction, "seed": self.seed,
            "stop_train_rmse": self.stop_train_rmse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def mse_loss(preds: np.ndarray, targets: np.ndarray):
    """Mean squared error and its gradient w.r.t. preds."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    diff = preds - targets
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.
    Returns the pre-clip norm."""
    norm = global_norm(list(grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update; epsilon sits outside the sqrt."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[name] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def split_by_trajectory(samples: Sequence, val_fraction: float,
                        rng: np.random.Generator):
    """Hold out whole trajectories for validation so no window leaks across
    the split. Returns (train_idx, val_idx, val_ids)."""
    ids = sorted({s.traj_id for s in samples})
    if val_fraction <= 0 or len(ids) < 2:
        return list(range(len(samples))), [], []
    n_val = max(1, round(val_fraction * len(ids)))
    if n_val >= len(ids):
        n_val = len(ids) - 1
    perm = rng.permutation(len(ids))
    val_ids = sorted(ids[i] for i in perm[:n_val])
    val_set = set(val_ids)
    train_idx = [i for i, s in enumerate(samples) if s.traj_id not in val_set]
    val_idx = [i for i, s in enumerate(samples) if s.traj_id in val_set]
    return train_idx, val_idx, val_ids


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_rmse: float
    seconds: float


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    history: list
    best_epoch: int
    best_val_rmse: float
    val_ids: list = field(default_factory=list)

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss if self.history else float("nan")


def _copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def train(samples: Sequence, model_cfg: SlatConfig,
          train_cfg: TrainConfig | None = None,
          val_samples: Sequence | None = None,
          init: dict | None = None) -> TrainResult:
    """Train on window samples; track the best validation checkpoint.

    With no explicit val_samples, a trajectory-level fraction of the input is
    held out. With val_fraction 0 (or a single source trajectory) the final
    parameters double as the best ones.
    """
    tcfg = train_cfg or TrainConfig()
    if len(samples) == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(int(tcfg.seed), 0x7261494E)))

    samples = list(samples)
    if val_samples is not None:
        train_idx = list(range(len(samples)))
        val_ids = sorted({s.traj_id for s in val_samples})
        val_list = list(val_samples)
    else:
        train_idx, val_idx, val_ids = split_by_trajectory(
            samples, tcfg.val_fraction, rng)
        val_list = [samples[i] for i in val_idx]
    if not train_idx:
        raise ValueError("validation split consumed all trajectories")

    values, descriptors, targets = stack_samples([samples[i] for i in train_idx])
    if val_list:
        val_values, val_descriptors, val_targets = stack_samples(val_list)

    params = _copy_params(init) if init is not None else init_params(model_cfg, rng)
    state = AdamState.init(params)
    best_params = _copy_params(params)
    best_val = float("inf")
    best_epoch = 0
    history = []
    n = values.shape[0]

    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            preds, cache = forward(params, model_cfg, values[idx],
                                   descriptors[idx], train=True, rng=rng)
            loss, gpred = mse_loss(preds, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, b, f"loss={loss}")
            grads = backward(params, model_cfg, cache, gpred)
            clip_gradients(grads, tcfg.clip_norm)
            try:
                adam_step(params, grads, state, tcfg)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, b, str(exc)) from exc
            losses.append(loss)

        if val_list:
            val_preds = predict_rul(params, model_cfg, (val_values, val_descriptors))
            val_rmse = float(np.sqrt(np.mean((val_preds - val_targets) ** 2)))
            if val_rmse < best_val:
                best_val = val_rmse
                best_epoch = epoch
                best_params = _copy_params(params)
        else:
            val_rmse = float("nan")
            best_params = params
            best_epoch = epoch
        train_loss = float(np.mean(losses))
        history.append(HistoryRow(epoch=epoch, train_loss=train_loss,
                                  val_rmse=val_rmse,
                                  seconds=time.perf_counter() - t0))
        if (tcfg.stop_train_rmse is not None
                and np.sqrt(train_loss) < tcfg.stop_train_rmse):
            break

    if not val_list:
        best_params = _copy_params(params)
        best_val = float("nan")
    return TrainResult(params=params, best_params=best_params, history=history,
                       best_epoch=best_epoch, best_val_rmse=best_val,
                       val_ids=val_ids)


def write_history(path, history: Sequence[HistoryRow]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_rmse", "seconds"])
        for row in history:
            writer.writerow([row.epoch, repr(float(row.train_loss)),
                             repr(float(row.val_rmse)), repr(float(row.seconds))])
