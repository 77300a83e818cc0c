"""Run-to-failure trajectories and their conversion into training windows.

A trajectory is a (T, S) matrix of raw sensor channels ending at the step
where the device crossed its soft-failure threshold. Windows of fixed length
slide over it; each window is z-scored with training statistics, enriched
with per-channel mean/slope descriptors (computed on raw values, then
z-scored with their own statistics), and labelled with the capped RUL at the
window's last step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class FaultMode(enum.Enum):
    """The four soft-failure scenarios of the two-stage amplifier."""

    PumpLaser = "PL"
    PowerDetector = "PD"
    VOA = "VOA"
    PassiveComponents = "PC"

    @classmethod
    def from_str(cls, s: str) -> "FaultMode":
        for m in cls:
            if m.value == s or m.name == s:
                return m
        raise ValueError(f"unknown fault mode {s!r}")


@dataclass(frozen=True)
class Trajectory:
    """One run-to-failure record; the last step is the failure step."""

    traj_id: str
    mode: FaultMode
    channels: np.ndarray  # (T, S) float64
    failure_index: int

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        object.__setattr__(self, "channels", ch)
        if ch.ndim != 2 or ch.shape[0] < 2 or ch.shape[1] < 1:
            raise ValueError(f"channels must be (T>=2, S>=1), got {ch.shape}")
        if self.failure_index != ch.shape[0] - 1:
            raise ValueError(
                f"failure_index {self.failure_index} != T-1 = {ch.shape[0] - 1}")
        if not np.all(np.isfinite(ch)):
            raise ValueError(f"trajectory {self.traj_id} has non-finite values")

    @property
    def n_steps(self) -> int:
        return self.channels.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class LabelConfig:
    """Piecewise-linear RUL target: min(rul_cap, steps to failure)."""

    rul_cap: float = 125.0

    def __post_init__(self):
        if not (self.rul_cap > 0 and np.isfinite(self.rul_cap)):
            raise ValueError(f"rul_cap must be positive and finite, got {self.rul_cap}")


@dataclass(frozen=True)
class WindowSample:
    values: np.ndarray       # (n_stw, S), normalized
    descriptors: np.ndarray  # (2S,): per-channel means then slopes, normalized
    rul_target: float
    traj_id: str = ""
    mode: FaultMode | None = None


@dataclass(frozen=True)
class NormStats:
    """Population z-score statistics; constant features get std 1."""

    channel_mean: np.ndarray     # (S,)
    channel_std: np.ndarray      # (S,)
    descriptor_mean: np.ndarray  # (2S,)
    descriptor_std: np.ndarray   # (2S,)

    def normalize_values(self, x: np.ndarray) -> np.ndarray:
        return (x - self.channel_mean) / self.channel_std

    def denormalize_values(self, x: np.ndarray) -> np.ndarray:
        return x * self.channel_std + self.channel_mean

    def normalize_descriptors(self, d: np.ndarray) -> np.ndarray:
        return (d - self.descriptor_mean) / self.descriptor_std

    def denormalize_descriptors(self, d: np.ndarray) -> np.ndarray:
        return d * self.descriptor_std + self.descriptor_mean

    def to_dict(self) -> dict:
        return {
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "descriptor_mean": self.descriptor_mean.tolist(),
            "descriptor_std": self.descriptor_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in
                      ("channel_mean", "channel_std", "descriptor_mean", "descriptor_std")})


def window_bounds(n_steps: int, n_stw: int, stride: int) -> list[tuple[int, int]]:
    """Half-open [start, end) index pairs of every full window."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if n_stw < 2:
        raise ValueError(f"window length must be >= 2, got {n_stw}")
    if n_stw > n_steps:
        raise ValueError(
            f"trajectory too short: {n_steps} steps < window length {n_stw}")
    count = (n_steps - n_stw) // stride + 1
    return [(k * stride, k * stride + n_stw) for k in range(count)]


def slide_windows(traj: Trajectory, n_stw: int, stride: int = 1) -> list[tuple[int, int]]:
    return window_bounds(traj.n_steps, n_stw, stride)


def compute_descriptors(window_values: np.ndarray) -> np.ndarray:
    """Per-channel mean and least-squares slope against the step index.

    Layout: [mean_0 .. mean_{S-1}, slope_0 .. slope_{S-1}].
    """
    w = np.asarray(window_values, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError(f"window must be (n>=2, S), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite values in window")
    n = w.shape[0]
    means = w.mean(axis=0)
    t_centered = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    slopes = t_centered @ w / (t_centered @ t_centered)
    return np.concatenate([means, slopes])


def label_rul(traj: Trajectory, cfg: LabelConfig) -> np.ndarray:
    """Capped linear RUL target per step; 0 at the failure step."""
    steps_left = traj.failure_index - np.arange(traj.n_steps, dtype=np.float64)
    return np.minimum(cfg.rul_cap, steps_left)


def collect_descriptors(trajs: Sequence[Trajectory], n_stw: int, stride: int) -> np.ndarray:
    """Stacked raw descriptor vectors of every window of every trajectory."""
    rows = []
    for traj in trajs:
        for start, end in slide_windows(traj, n_stw, stride):
            rows.append(compute_descriptors(traj.channels[start:end]))
    return np.asarray(rows)


def fit_norm_stats(train_trajs: Sequence[Trajectory], descriptors: np.ndarray) -> NormStats:
    """Channel stats over all training steps; descriptor stats over all
    training windows. Population std; exactly-constant features get std 1."""
    if len(train_trajs) == 0:
        raise ValueError("need at least one training trajectory")
    stacked = np.concatenate([t.channels for t in train_trajs], axis=0)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[1] != 2 * stacked.shape[1]:
        raise ValueError(
            f"descriptor matrix must be (W, {2 * stacked.shape[1]}), got {descriptors.shape}")

    def _stats(x):
        mean = x.mean(axis=0)
        std = x.std(axis=0)  # population (ddof=0)
        return mean, np.where(std == 0.0, 1.0, std)

    ch_mean, ch_std = _stats(stacked)
    de_mean, de_std = _stats(descriptors)
    return NormStats(ch_mean, ch_std, de_mean, de_std)


def build_dataset(
    trajs: Iterable[Trajectory],
    n_stw: int,
    stride: int,
    cfg: LabelConfig,
    stats: NormStats,
) -> list[WindowSample]:
    """Normalized, descriptor-enriched samples; target = RUL at window end."""
    samples: list[WindowSample] = []
    for traj in trajs:
        targets = label_rul(traj, cfg)
        for start, end in slide_windows(traj, n_stw, stride):
            raw = traj.channels[start:end]
            desc = stats.normalize_descriptors(compute_descriptors(raw))
            samples.append(WindowSample(
                values=stats.normalize_values(raw),
                descriptors=desc,
                rul_target=float(targets[end - 1]),
                traj_id=traj.traj_id,
                mode=traj.mode,
            ))
    return samples
