"""Glue between the stages: from a preprocessed recording to trained networks and a sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classifier import Network, TrainConfig, build_arch, train
from .eeg_data import Recording, SplitPlan, label_timeline, split_seizures
from .evaluation import PatientBundle, SweepGrid, held_out_segments
from .imaging import (
    Dataset,
    ImageType,
    NormStats,
    balance,
    build_train_interictal,
    build_train_preictal,
    compute_norm_stats,
    normalize,
)

log = logging.getLogger(__name__)


def norm_stats_for(rec: Recording, plan: SplitPlan, mode: str = "joint", scope: str = "global") -> NormStats:
    """``mode="joint"`` uses the whole recording (training and testing groups);
    ``"train-only"`` uses only the signal up to the last training seizure's offset."""
    if mode == "joint":
        return compute_norm_stats(rec.samples, scope)
    if mode == "train-only":
        end = rec.annotations[plan.train_seizure_indices[-1]].offset_s
        return compute_norm_stats(rec.samples[:, : int(round(end * rec.fs))], scope)
    raise ValueError(f"unknown normalization mode {mode!r}")


def normalized_signal(rec: Recording, stats: NormStats) -> np.ndarray:
    return normalize(rec.samples, stats)


def training_dataset(signal: np.ndarray, rec: Recording, plan: SplitPlan, image_type, preictal_minutes: float,
                     seed: int = 0, guard_minutes: float = 60.0, max_per_class: int | None = None,
                     stats: NormStats | None = None) -> Dataset:
    """Balanced training images from the training seizures.

    ``max_per_class`` caps the pre-ictal image count by seeded uniform
    subsampling (the inter-ictal draw then matches it); ``None`` keeps every
    pre-ictal window.
    """
    it = ImageType.parse(image_type)
    fs = int(rec.fs)
    train = set(plan.train_seizure_indices)
    timeline = [iv for iv in label_timeline(rec, preictal_minutes, guard_minutes) if iv.seizure_index in train]
    pre = build_train_preictal(signal, timeline, it, fs)
    if max_per_class is not None and len(pre) > max_per_class:
        keep = np.sort(np.random.default_rng(seed).choice(len(pre), size=max_per_class, replace=False))
        pre = [pre[i] for i in keep]
    inter = build_train_interictal(signal, timeline, it, len(pre), len(train), seed, fs)
    return balance(pre, inter, seed, stats)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    guard_minutes: float = 60.0
    norm_mode: str = "joint"
    max_per_class: int | None = None


def train_network(signal: np.ndarray, rec: Recording, plan: SplitPlan, image_type, preictal_minutes: float,
                  cfg: RunConfig = RunConfig(), stats: NormStats | None = None):
    """Build the balanced dataset for one (image type, pre-ictal time) and train its network."""
    it = ImageType.parse(image_type)
    ds = training_dataset(signal, rec, plan, it, preictal_minutes, cfg.train.seed, cfg.guard_minutes,
                          cfg.max_per_class, stats)
    log.info("%s/%g min: %d training images %s", it.label, preictal_minutes, len(ds), ds.class_counts)
    net = Network(build_arch(it, channels=rec.n_channels, width=int(rec.fs)), seed=cfg.train.seed)
    net, history = train(net, ds, cfg.train)
    return net, history, ds


def train_all(rec: Recording, grid: SweepGrid = SweepGrid(), cfg: RunConfig = RunConfig()) -> PatientBundle:
    """Normalize, split, and train one network per (image type, pre-ictal time) in ``grid``."""
    plan = split_seizures(rec)
    stats = norm_stats_for(rec, plan, cfg.norm_mode)
    signal = normalized_signal(rec, stats)
    networks = {}
    for it, X in grid.networks:
        networks[(it, X)], _, _ = train_network(signal, rec, plan, it, X, cfg, stats)
    return PatientBundle(rec.patient_id, signal, rec.duration_s, rec.annotations, plan, networks, int(rec.fs),
                         cfg.guard_minutes)


__all__ = [
    "RunConfig",
    "held_out_segments",
    "norm_stats_for",
    "normalized_signal",
    "train_all",
    "train_network",
    "training_dataset",
]
