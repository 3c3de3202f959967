"""Turn a normalized multi-channel signal into stacked 1 s / 5 s / 10 s images.

Images are lightweight descriptors that point into the normalized signal;
pixels are materialized on demand so that long recordings do not have to be
copied once per overlapping window.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_path
from .eeg_data import IntervalLabel


class ImagingWarning(UserWarning):
    pass


class ImageType(enum.Enum):
    ONE_SEC = 1
    FIVE_SEC = 5
    TEN_SEC = 10

    @property
    def seconds(self) -> int:
        return self.value

    @property
    def label(self) -> str:
        return f"{self.value}s"

    def rows(self, channels: int = 19) -> int:
        return channels * self.value

    def window_samples(self, fs: int = 256) -> int:
        return self.value * fs

    @classmethod
    def parse(cls, value) -> ImageType:
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().removesuffix("s")
        try:
            return cls(int(text))
        except ValueError:
            raise ValueError(f"unknown image type {value!r}; expected 1s, 5s or 10s") from None


LABEL_CODES = {"interictal": 0, "preictal": 1, "unlabeled": 2}
CODE_LABELS = {v: k for k, v in LABEL_CODES.items()}


@dataclass(frozen=True)
class NormStats:
    mean: float | np.ndarray
    half_range: float | np.ndarray
    scope: str = "global"

    def to_dict(self) -> dict:
        conv = lambda v: np.asarray(v).tolist()  # noqa: E731
        return {"mean": conv(self.mean), "half_range": conv(self.half_range), "scope": self.scope}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        mean, half = d["mean"], d["half_range"]
        if d["scope"] == "per-channel":
            mean, half = np.asarray(mean), np.asarray(half)
        return cls(mean, half, d["scope"])


@dataclass(frozen=True)
class ImageTensor:
    """One image: a window of the normalized signal, stacked one second per band.

    ``source`` is either the normalized ``(channels, samples)`` signal with
    ``start`` the first sample of the window, or (when ``start`` is None)
    the already materialized pixel matrix.
    """

    image_type: ImageType
    label: str
    t_end_s: float
    source: np.ndarray = field(repr=False, compare=False)
    start: int | None = None
    fs: int = 256
    seizure_index: int | None = None

    @property
    def pixels(self) -> np.ndarray:
        if self.start is None:
            return self.source
        return window_pixels(self.source, self.start, self.image_type, self.fs)

    @property
    def shape(self) -> tuple[int, int]:
        if self.start is None:
            return self.source.shape
        return (self.source.shape[0] * self.image_type.seconds, self.fs)


def window_pixels(signal: np.ndarray, start: int, image_type: ImageType, fs: int = 256) -> np.ndarray:
    """Rows ``j*C:(j+1)*C`` hold second ``j`` of the window (earliest on top)."""
    k = image_type.seconds
    c = signal.shape[0]
    win = signal[:, start : start + k * fs]
    if win.shape[1] != k * fs:
        raise ValueError(f"window starting at sample {start} runs past the signal end")
    return win.reshape(c, k, fs).transpose(1, 0, 2).reshape(k * c, fs)


def stack_pixels(images) -> np.ndarray:
    """``(n, rows, cols)`` float32 array for a list of images."""
    images = list(images)
    if not images:
        raise ValueError("no images to stack")
    out = np.empty((len(images),) + tuple(images[0].shape), dtype=np.float32)
    for i, im in enumerate(images):
        out[i] = im.pixels
    return out


# ------------------------------------------------------------- normalization


def _as_list(signal):
    if isinstance(signal, np.ndarray):
        return [signal]
    return list(signal)


def compute_norm_stats(signal, scope: str = "global", block: int = 1 << 20) -> NormStats:
    """Mean and twice the largest absolute deviation from it.

    ``signal`` is one ``(channels, samples)`` array or a list of them (e.g.
    the training and testing groups); statistics are taken jointly.  With
    ``scope="per-channel"`` each channel gets its own mean and range.
    """
    parts = [np.asarray(p) for p in _as_list(signal)]
    if not parts or all(p.size == 0 for p in parts):
        raise ValueError("cannot compute normalization statistics of an empty signal")
    if scope not in ("global", "per-channel"):
        raise ValueError(f"unknown scope {scope!r}")
    c = parts[0].shape[0]
    total = np.zeros(c)
    count = 0
    for p in parts:
        for s in range(0, p.shape[1], block):
            total += p[:, s : s + block].sum(axis=1, dtype=np.float64)
        count += p.shape[1]
    if scope == "global":
        mean = float(total.sum() / (count * c))
        dev = 0.0
        for p in parts:
            for s in range(0, p.shape[1], block):
                chunk = p[:, s : s + block]
                if chunk.size:
                    dev = max(dev, float(np.abs(chunk.astype(np.float64) - mean).max()))
        return NormStats(mean, 2.0 * dev, scope)
    mean = total / count
    dev = np.zeros(c)
    for p in parts:
        for s in range(0, p.shape[1], block):
            chunk = p[:, s : s + block]
            if chunk.size:
                dev = np.maximum(dev, np.abs(chunk.astype(np.float64) - mean[:, None]).max(axis=1))
    return NormStats(mean, 2.0 * dev, scope)


def normalize(signal: np.ndarray, stats: NormStats, out: np.ndarray | None = None, return_clamped: bool = False,
              block: int = 1 << 20):
    """``(x - mean) / half_range + 0.5`` clamped to [0, 1].

    A zero range maps everything to 0.5.  With ``return_clamped`` the number
    of values that fell outside [0, 1] before clamping is returned as well.
    """
    signal = np.asarray(signal)
    if out is None:
        out = np.empty(signal.shape, dtype=np.float32)
    mean = np.asarray(stats.mean, dtype=np.float64)
    half = np.asarray(stats.half_range, dtype=np.float64)
    if mean.ndim:
        mean, half = mean[:, None], half[:, None]
    safe = np.where(half > 0, half, 1.0)
    clamped = 0
    for s in range(0, signal.shape[-1], block):
        chunk = (signal[..., s : s + block].astype(np.float64) - mean) / safe + 0.5
        chunk = np.where(half > 0, chunk, 0.5)
        outside = (chunk < 0) | (chunk > 1)
        clamped += int(outside.sum())
        out[..., s : s + block] = np.clip(chunk, 0.0, 1.0)
    if return_clamped:
        return out, clamped
    return out


# ------------------------------------------------------------------ windowing


def _sample_range(iv: IntervalLabel, fs: int, n_samples: int) -> tuple[int, int]:
    return max(int(round(iv.start_s * fs)), 0), min(int(round(iv.end_s * fs)), n_samples)


def window_starts(a: int, b: int, window: int, step: int) -> np.ndarray:
    """Start samples of every full window inside ``[a, b)``."""
    if b - a < window:
        return np.empty(0, dtype=np.int64)
    return np.arange(a, b - window + 1, step, dtype=np.int64)


def build_train_preictal(signal: np.ndarray, intervals, image_type, fs: int = 256) -> list[ImageTensor]:
    """Pre-ictal training images with a half-second step for every image type.

    For 1 s images the half-second step is the 50 % overlap; 5 s and 10 s
    windows slide by the same half second.
    """
    it = ImageType.parse(image_type)
    window = it.window_samples(fs)
    step = fs // 2
    out = []
    for iv in intervals:
        if iv.label != "preictal":
            continue
        a, b = _sample_range(iv, fs, signal.shape[1])
        starts = window_starts(a, b, window, step)
        if not len(starts):
            warnings.warn(f"pre-ictal span {iv.start_s}-{iv.end_s} s is shorter than one {it.label} window",
                          ImagingWarning, stacklevel=2)
        out += [ImageTensor(it, "preictal", (s + window) / fs, signal, int(s), fs, iv.seizure_index) for s in starts]
    out.sort(key=lambda im: im.t_end_s)
    return out


def interictal_candidates(signal_len: int, intervals, image_type, fs: int = 256) -> dict[int | None, np.ndarray]:
    """Non-overlapping inter-ictal window starts grouped by the seizure they precede."""
    it = ImageType.parse(image_type)
    window = it.window_samples(fs)
    groups: dict[int | None, list[np.ndarray]] = {}
    for iv in intervals:
        if iv.label != "interictal":
            continue
        a, b = _sample_range(iv, fs, signal_len)
        groups.setdefault(iv.seizure_index, []).append(window_starts(a, b, window, window))
    return {k: np.concatenate(v) for k, v in groups.items()}


def _quotas(needed: int, capacity: list[int]) -> list[int]:
    n = len(capacity)
    quota = [needed // n + (1 if i < needed % n else 0) for i in range(n)]
    # hand the shortfall of small regions to regions with spare windows
    while True:
        short = sum(max(q - c, 0) for q, c in zip(quota, capacity))
        quota = [min(q, c) for q, c in zip(quota, capacity)]
        if not short:
            return quota
        spare = [i for i in range(n) if quota[i] < capacity[i]]
        if not spare:
            return quota
        for j, i in enumerate(spare):
            quota[i] += short // len(spare) + (1 if j < short % len(spare) else 0)


def build_train_interictal(signal: np.ndarray, intervals, image_type, needed_count: int,
                           n_train_seizures: int | None = None, seed: int = 0, fs: int = 256) -> list[ImageTensor]:
    """Draw ``needed_count`` non-overlapping inter-ictal images, spread evenly over the
    inter-ictal regions preceding each training seizure.

    ``intervals`` should contain only the training inter-ictal spans.  Regions
    are identified by ``IntervalLabel.seizure_index``; when
    ``n_train_seizures`` is given, regions ``0..n-1`` are expected and a
    missing one just contributes no candidates.
    """
    it = ImageType.parse(image_type)
    cands = interictal_candidates(signal.shape[1], intervals, it, fs)
    if n_train_seizures is not None:
        keys = list(range(n_train_seizures))
        extra = sorted(k for k in cands if k not in keys and k is not None)
        keys += extra
    else:
        keys = sorted(k for k in cands if k is not None) + ([None] if None in cands else [])
    if not keys:
        raise ValueError("no inter-ictal regions to draw from")
    capacity = [len(cands.get(k, ())) for k in keys]
    if sum(capacity) < needed_count:
        raise ValueError(f"only {sum(capacity)} inter-ictal candidate windows for {needed_count} needed images")
    base = needed_count // len(keys)
    quota = _quotas(needed_count, capacity)
    if any(c < base for c in capacity):
        warnings.warn(f"inter-ictal regions too short for an even split; quotas {quota}", ImagingWarning,
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    window = it.window_samples(fs)
    out = []
    for key, q in zip(keys, quota):
        if q == 0:
            continue
        starts = cands[key]
        pick = np.sort(rng.choice(len(starts), size=q, replace=False))
        out += [ImageTensor(it, "interictal", (int(s) + window) / fs, signal, int(s), fs, key) for s in starts[pick]]
    out.sort(key=lambda im: im.t_end_s)
    return out


def build_test_stream(signal: np.ndarray, image_type, start_s: float = 0.0, end_s: float | None = None,
                      timeline=None, fs: int = 256) -> list[ImageTensor]:
    """One image per second over ``[start_s, end_s)``.

    Every window is ``k`` seconds long and consecutive windows are one second
    apart, so ``t_end_s`` increases by exactly 1.  When a ``timeline`` is
    given, images are labelled by the span containing their last sample
    (spans other than pre-/inter-ictal give ``"unlabeled"``).
    """
    it = ImageType.parse(image_type)
    a = int(round(start_s * fs))
    b = signal.shape[1] if end_s is None else min(int(round(end_s * fs)), signal.shape[1])
    window = it.window_samples(fs)
    starts = window_starts(a, b, window, fs)
    labels = ["unlabeled"] * len(starts)
    if timeline is not None and len(starts):
        last = (starts + window - 1) / fs
        bounds = np.array([iv.start_s for iv in timeline])
        idx = np.searchsorted(bounds, last, side="right") - 1
        for i, j in enumerate(idx):
            lab = timeline[j].label if j >= 0 else "unlabeled"
            labels[i] = lab if lab in ("preictal", "interictal") else "unlabeled"
    return [ImageTensor(it, lab, (int(s) + window) / fs, signal, int(s), fs) for s, lab in zip(starts, labels)]


# ------------------------------------------------------------------- datasets


@dataclass
class Dataset:
    images: list[ImageTensor]
    image_type: ImageType
    seed: int = 0
    stats: NormStats | None = None

    @property
    def labels(self) -> np.ndarray:
        return np.array([LABEL_CODES[im.label] for im in self.images], dtype=np.uint8)

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {"preictal": 0, "interictal": 0}
        for im in self.images:
            counts[im.label] = counts.get(im.label, 0) + 1
        return counts

    @property
    def provenance(self) -> list[tuple[int | None, float]]:
        return [(im.seizure_index, im.t_end_s) for im in self.images]

    def __len__(self) -> int:
        return len(self.images)

    def pixels(self, indices=None) -> np.ndarray:
        if indices is None:
            return stack_pixels(self.images)
        return stack_pixels(self.images[i] for i in indices)


def balance(preictal_imgs, interictal_imgs, seed: int = 0, stats: NormStats | None = None) -> Dataset:
    """Merge equal-sized class lists into one seeded shuffled dataset."""
    pre, inter = list(preictal_imgs), list(interictal_imgs)
    if not pre or not inter:
        raise ValueError("both classes need at least one image")
    if len(pre) != len(inter):
        raise ValueError(f"class count mismatch: {len(pre)} pre-ictal vs {len(inter)} inter-ictal")
    types = {im.image_type for im in pre + inter}
    if len(types) != 1:
        raise ValueError(f"mixed image types {types}")
    merged = pre + inter
    order = np.random.default_rng(seed).permutation(len(merged))
    return Dataset([merged[i] for i in order], types.pop(), seed, stats)


def save_dataset(ds: Dataset, directory) -> Path:
    """``meta.json`` + row-major ``images.f32`` + ``labels.u8`` in ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = ds.images[0].shape if ds.images else (0, 0)
    with atomic_path(directory / "images.f32") as tmp:
        with open(tmp, "wb") as fh:
            for im in ds.images:
                np.ascontiguousarray(im.pixels, dtype="<f4").tofile(fh)
    with atomic_path(directory / "labels.u8") as tmp:
        ds.labels.tofile(tmp)
    meta = {
        "image_type": ds.image_type.label,
        "count": len(ds),
        "rows": shape[0],
        "cols": shape[1],
        "class_counts": ds.class_counts,
        "seed": ds.seed,
        "stats": ds.stats.to_dict() if ds.stats else None,
        "t_end_s": [im.t_end_s for im in ds.images],
        "seizure_index": [im.seizure_index for im in ds.images],
    }
    with atomic_path(directory / "meta.json") as tmp:
        Path(tmp).write_text(json.dumps(meta))
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    it = ImageType.parse(meta["image_type"])
    n, rows, cols = meta["count"], meta["rows"], meta["cols"]
    pixels = np.fromfile(directory / "images.f32", dtype="<f4")
    labels = np.fromfile(directory / "labels.u8", dtype=np.uint8)
    if pixels.size != n * rows * cols or labels.size != n:
        raise ValueError(f"{directory}: data files do not match meta.json counts")
    pixels = pixels.reshape(n, rows, cols).astype(np.float32)
    images = [
        ImageTensor(it, CODE_LABELS[int(lab)], t, pixels[i], None, cols, si)
        for i, (lab, t, si) in enumerate(zip(labels, meta["t_end_s"], meta["seizure_index"]))
    ]
    stats = NormStats.from_dict(meta["stats"]) if meta.get("stats") else None
    return Dataset(images, it, meta["seed"], stats)
