"""On-disk corpus format and end-to-end generation.

A corpus directory holds one CSV per trajectory plus ``manifest.json``. The
CSV has columns ``t, ch_0 .. ch_{S-1}, rul`` where rul is the capped target;
channel semantics live in the manifest. All floats are written with repr so
re-generation from the same seed is byte-identical. Normalization statistics
are fitted on the train split only and stored in the manifest, so every
downstream consumer sees the exact same scaling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import simulator
from .simulator import SimConfig, simulate_trajectory, trajectory_seed
from .windowing import (FaultMode, LabelConfig, NormStats, Trajectory,
                        collect_descriptors, fit_norm_stats, label_rul)

FORMAT_TAG = "slat-corpus-v1"


def _write_trajectory_csv(path: Path, traj: Trajectory, cap: float):
    rul = label_rul(traj, LabelConfig(rul_cap=cap))
    n_ch = traj.n_channels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"ch_{i}" for i in range(n_ch)] + ["rul"])
        for t in range(traj.n_steps):
            row = [str(t)]
            row += [repr(float(v)) for v in traj.channels[t]]
            row.append(repr(float(rul[t])))
            writer.writerow(row)


def _read_trajectory_csv(path: Path, traj_id: str, mode: FaultMode,
                         failure_index: int) -> Trajectory:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "t" or header[-1] != "rul":
            raise ValueError(f"{path}: unexpected header {header!r}")
        n_ch = len(header) - 2
        rows = []
        for rec in reader:
            rows.append([float(x) for x in rec[1:1 + n_ch]])
    return Trajectory(traj_id=traj_id, mode=mode,
                      channels=np.asarray(rows, dtype=np.float64),
                      failure_index=failure_index)


def _split_ids(ids: Sequence[str], train_frac: float,
               rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Seeded shuffle split; the test side always gets at least one id."""
    n = len(ids)
    if n < 2:
        raise ValueError("need at least 2 trajectories per mode to split")
    n_test = max(1, round((1.0 - train_frac) * n))
    if n_test >= n:
        raise ValueError("train fraction leaves no training trajectories")
    perm = rng.permutation(n)
    test = sorted(ids[i] for i in perm[:n_test])
    train = sorted(ids[i] for i in perm[n_test:])
    return train, test


@dataclass
class Corpus:
    """A loaded corpus: trajectories, split tags and pipeline settings."""

    root: Path
    manifest: dict
    trajectories: dict
    split: dict

    @property
    def n_stw(self) -> int:
        return int(self.manifest["n_stw"])

    @property
    def stride(self) -> int:
        return int(self.manifest["stride"])

    @property
    def rul_cap(self) -> float:
        return float(self.manifest["rul_cap"])

    @property
    def label_config(self) -> LabelConfig:
        return LabelConfig(rul_cap=self.rul_cap)

    @property
    def stats(self) -> NormStats:
        return NormStats.from_dict(self.manifest["norm_stats"])

    @property
    def channels(self) -> list:
        return list(self.manifest["channels"])

    def ids(self, split: str | None = None) -> list:
        if split is None:
            return sorted(self.trajectories)
        return sorted(tid for tid, s in self.split.items() if s == split)

    def subset(self, split: str) -> list:
        return [self.trajectories[tid] for tid in self.ids(split)]

    def train_trajectories(self) -> list:
        return self.subset("train")

    def test_trajectories(self) -> list:
        return self.subset("test")

    def modes_present(self) -> list:
        return sorted({t.mode.value for t in self.trajectories.values()})


def generate_corpus(out_dir, master_seed: int, n_per_mode: int = 10,
                    n_stw: int = 30, stride: int = 1, rul_cap: float = 125.0,
                    noise_scale: float = 1.0, train_frac: float = 0.8,
                    sim_configs: Sequence[SimConfig] | None = None,
                    modes: Iterable[FaultMode] | None = None) -> Corpus:
    """Simulate every fault mode, split per mode, fit train-split stats and
    write the corpus. Returns the loaded result."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if sim_configs is None:
        wanted = list(modes) if modes is not None else list(FaultMode)
        sim_configs = [SimConfig(mode=m, n_trajectories=n_per_mode,
                                 noise_scale=noise_scale) for m in wanted]

    trajs: dict = {}
    meta: dict = {}
    for cfg in sim_configs:
        mode_idx = list(FaultMode).index(cfg.mode)
        for i in range(cfg.n_trajectories):
            seed = trajectory_seed(master_seed, cfg.mode, i)
            tid = f"{cfg.mode.value}_{i:03d}"
            traj = simulate_trajectory(cfg, seed, traj_id=tid)
            if traj.n_steps < 2 * n_stw:
                raise ValueError(
                    f"trajectory {tid} has {traj.n_steps} steps, "
                    f"need >= {2 * n_stw}; lower n_stw or slow the drift")
            trajs[tid] = traj
            meta[tid] = {
                "id": tid,
                "mode": cfg.mode.value,
                "file": f"{tid}.csv",
                "n_steps": traj.n_steps,
                "failure_index": traj.failure_index,
                "seed_entropy": [int(master_seed), mode_idx, i],
            }

    split: dict = {}
    split_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(int(master_seed), 7919)))
    for cfg in sim_configs:
        ids = sorted(t for t in trajs if trajs[t].mode is cfg.mode)
        train, test = _split_ids(ids, train_frac, split_rng)
        for tid in train:
            split[tid] = "train"
        for tid in test:
            split[tid] = "test"
    for tid in meta:
        meta[tid]["split"] = split[tid]

    train_trajs = [trajs[t] for t in sorted(trajs) if split[t] == "train"]
    descriptors = collect_descriptors(train_trajs, n_stw, stride)
    stats = fit_norm_stats(train_trajs, descriptors)

    manifest = {
        "format": FORMAT_TAG,
        "master_seed": int(master_seed),
        "n_stw": n_stw,
        "stride": stride,
        "rul_cap": float(rul_cap),
        "train_frac": float(train_frac),
        "noise_scale": float(sim_configs[0].noise_scale),
        "channels": list(simulator.CHANNELS),
        "norm_stats": stats.to_dict(),
        "trajectories": [meta[t] for t in sorted(meta)],
    }

    for tid in sorted(trajs):
        _write_trajectory_csv(out / meta[tid]["file"], trajs[tid], rul_cap)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Corpus(root=out, manifest=manifest, trajectories=trajs, split=split)


def load_corpus(root) -> Corpus:
    root = Path(root)
    with open(root / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_TAG:
        raise ValueError(f"{root}: not a corpus directory "
                         f"(format={manifest.get('format')!r})")
    trajs = {}
    split = {}
    for rec in manifest["trajectories"]:
        mode = FaultMode.from_str(rec["mode"])
        trajs[rec["id"]] = _read_trajectory_csv(
            root / rec["file"], rec["id"], mode, int(rec["failure_index"]))
        split[rec["id"]] = rec["split"]
    return Corpus(root=root, manifest=manifest, trajectories=trajs, split=split)
