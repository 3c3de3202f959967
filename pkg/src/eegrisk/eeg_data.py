"""Annotated multi-channel EEG recordings: storage, synthesis, labelling and splitting."""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_path

FORMAT_VERSION = 1
DEFAULT_FS = 256
#: 10-20 system electrodes; image rows follow this order
CHANNEL_NAMES = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "T3", "C3", "Cz", "C4", "T4",
    "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
)

LABELS = ("preictal", "interictal", "ictal", "excluded")


class RecordingFormatError(ValueError):
    """Header or raw sample file does not match the recording format."""


class InfeasibleLayoutError(ValueError):
    """Seizure onsets cannot be placed as requested."""


class TimelineWarning(UserWarning):
    pass


@dataclass(frozen=True, order=True)
class SeizureAnnotation:
    onset_s: float
    offset_s: float
    kind: str = "clinical"

    def __post_init__(self):
        if not 0 <= self.onset_s < self.offset_s:
            raise ValueError(f"need 0 <= onset < offset, got ({self.onset_s}, {self.offset_s})")
        if self.kind not in ("clinical", "synthetic"):
            raise ValueError(f"unknown annotation kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Recording:
    """Immutable multi-channel recording.

    ``samples`` has shape ``(n_channels, n_samples)`` in microvolts.
    """

    samples: np.ndarray = field(repr=False)
    fs: float = DEFAULT_FS
    annotations: tuple[SeizureAnnotation, ...] = ()
    patient_id: str = "patient"
    channel_names: tuple[str, ...] = CHANNEL_NAMES

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (channels, samples), got shape {samples.shape}")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if len(self.channel_names) != samples.shape[0]:
            raise ValueError(f"{len(self.channel_names)} channel names for {samples.shape[0]} channels")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        ann = tuple(sorted(self.annotations))
        for a, b in zip(ann, ann[1:]):
            if b.onset_s < a.offset_s:
                raise ValueError(f"overlapping seizures {a} and {b}")
        if ann and ann[-1].offset_s > self.duration_s:
            raise ValueError(f"seizure {ann[-1]} extends past the recording end {self.duration_s}")
        object.__setattr__(self, "annotations", ann)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    @property
    def onsets(self) -> list[float]:
        return [a.onset_s for a in self.annotations]

    def with_samples(self, samples: np.ndarray) -> Recording:
        return replace(self, samples=samples)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.fs == other.fs
            and self.annotations == other.annotations
            and self.patient_id == other.patient_id
            and self.channel_names == other.channel_names
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class IntervalLabel:
    start_s: float
    end_s: float
    label: str
    #: seizure the interval belongs to: the seizure itself for pre-ictal and
    #: ictal spans, the next seizure for inter-ictal spans (None after the last)
    seizure_index: int | None = None

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SplitPlan:
    train_seizure_indices: tuple[int, ...]
    test_seizure_indices: tuple[int, ...]


# --------------------------------------------------------------------- files


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".f32") else path
    return stem.with_suffix(".json"), stem.with_suffix(".f32")


def save_recording(rec: Recording, path) -> Path:
    """Write ``<name>.json`` header plus ``<name>.f32`` little-endian samples.

    Samples are interleaved sample-major (all channels of sample 0, then
    sample 1, ...).  Returns the header path.
    """
    header_path, raw_path = _paths(path)
    header = {
        "version": FORMAT_VERSION,
        "patient_id": rec.patient_id,
        "channels": rec.n_channels,
        "fs": rec.fs,
        "sample_count": rec.n_samples,
        "channel_names": list(rec.channel_names),
        "annotations": [
            {"onset_s": a.onset_s, "offset_s": a.offset_s, "kind": a.kind} for a in rec.annotations
        ],
    }
    with atomic_path(raw_path) as tmp:
        # write in blocks so a long recording never needs a full transposed copy
        with open(tmp, "wb") as fh:
            block = 1 << 20
            for s in range(0, rec.n_samples, block):
                np.ascontiguousarray(rec.samples[:, s : s + block].T, dtype="<f4").tofile(fh)
    with atomic_path(header_path) as tmp:
        Path(tmp).write_text(json.dumps(header, indent=2))
    return header_path


def load_recording(path) -> Recording:
    header_path, raw_path = _paths(path)
    try:
        header = json.loads(Path(header_path).read_text())
    except json.JSONDecodeError as exc:
        raise RecordingFormatError(f"{header_path}: malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise RecordingFormatError(f"{header_path}: header must be a JSON object")
    if header.get("version") != FORMAT_VERSION:
        raise RecordingFormatError(f"{header_path}: unsupported version {header.get('version')!r}")
    try:
        channels = int(header["channels"])
        fs = float(header["fs"])
        count = int(header["sample_count"])
        names = tuple(header["channel_names"])
        patient = str(header["patient_id"])
        ann = [SeizureAnnotation(float(a["onset_s"]), float(a["offset_s"]), a.get("kind", "clinical"))
               for a in header["annotations"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordingFormatError(f"{header_path}: malformed header: {exc}") from exc
    if len(names) != channels:
        raise RecordingFormatError(f"{header_path}: {len(names)} channel names for {channels} channels")
    n_values = os.path.getsize(raw_path) // 4
    if os.path.getsize(raw_path) % 4 or n_values != count * channels:
        raise RecordingFormatError(
            f"{raw_path}: sample-count mismatch: header declares {count}x{channels} values, "
            f"file holds {os.path.getsize(raw_path) / 4:g}"
        )
    raw = np.fromfile(raw_path, dtype="<f4").reshape(count, channels)
    samples = np.ascontiguousarray(raw.T, dtype=np.float32)
    try:
        return Recording(samples, fs, tuple(ann), patient, names)
    except ValueError as exc:
        raise RecordingFormatError(f"{header_path}: {exc}") from exc


# ----------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float
    seizure_onsets: tuple[float, ...]
    preictal_signature_minutes: float = 10.0
    seed: int = 0
    seizure_duration_s: float = 60.0
    min_gap_minutes: float = 60.0
    fs: int = DEFAULT_FS
    channel_names: tuple[str, ...] = CHANNEL_NAMES
    patient_id: str = "synthetic"
    #: standard deviation of the background per channel (uV)
    background_uv: float = 20.0
    #: fraction of background variance shared across channels
    common_fraction: float = 0.3
    signature_channels: tuple[int, ...] = (8, 9, 10, 13, 14, 15)
    signature_band_hz: tuple[float, float] = (18.0, 24.0)
    signature_uv: float = 12.0
    #: signature amplitude at the start of the pre-ictal span, relative to its
    #: amplitude at onset
    signature_ramp_start: float = 0.5
    seizure_uv: float = 60.0
    line_noise_uv: float = 0.0


def _pinkish_noise(n: int, fs: float, rng: np.random.Generator, band=(0.5, 100.0)) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum restricted to ``band``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    gain = np.zeros_like(f)
    inband = (f >= band[0]) & (f <= band[1])
    gain[inband] = 1.0 / np.sqrt(f[inband])
    out = np.fft.irfft(spec * gain, n)
    sd = out.std()
    return out / sd if sd > 0 else out


def check_layout(cfg: SynthConfig) -> None:
    onsets = list(cfg.seizure_onsets)
    if onsets != sorted(onsets):
        raise InfeasibleLayoutError("seizure onsets must be increasing")
    lead = cfg.preictal_signature_minutes * 60
    gap = max(cfg.min_gap_minutes * 60, lead)
    prev_end = None
    for onset in onsets:
        if onset < lead:
            raise InfeasibleLayoutError(f"onset {onset} s leaves less than {lead:g} s of lead time")
        if prev_end is not None and onset - prev_end < gap:
            raise InfeasibleLayoutError(
                f"onset {onset} s is only {onset - prev_end:g} s after the previous seizure (need {gap:g})"
            )
        prev_end = onset + cfg.seizure_duration_s
    if prev_end is not None and prev_end > cfg.duration_s:
        raise InfeasibleLayoutError(f"last seizure ends at {prev_end} s, after the recording end")


def synth_generate(cfg: SynthConfig) -> Recording:
    """Deterministic synthetic recording with a pre-ictal spectral signature.

    Background is band-limited 1/f noise (0.5-100 Hz) with a shared
    component across channels.  During the last
    ``preictal_signature_minutes`` before every onset, the signature channels
    carry a rhythm wandering inside ``signature_band_hz`` whose amplitude
    ramps up linearly towards the onset.  Seizures are a 3 Hz rhythmic
    discharge on all channels.
    """
    check_layout(cfg)
    fs = cfg.fs
    n = int(round(cfg.duration_s * fs))
    n_ch = len(cfg.channel_names)
    rng = np.random.default_rng(cfg.seed)
    common = _pinkish_noise(n, fs, rng)
    own = np.sqrt(1.0 - cfg.common_fraction)
    shared = np.sqrt(cfg.common_fraction)
    samples = np.empty((n_ch, n), dtype=np.float32)
    for ch in range(n_ch):
        x = own * _pinkish_noise(n, fs, rng)
        x += shared * common
        x *= cfg.background_uv
        samples[ch] = x
    del common

    if cfg.line_noise_uv:
        samples += (cfg.line_noise_uv * np.sin(2 * np.pi * 50.0 * np.arange(n) / fs)).astype(np.float32)

    lo, hi = cfg.signature_band_hz
    span = int(round(cfg.preictal_signature_minutes * 60 * fs))
    ictal_len = int(round(cfg.seizure_duration_s * fs))
    for onset in cfg.seizure_onsets:
        i_on = int(round(onset * fs))
        i0 = i_on - span
        t = np.arange(span) / fs
        ramp = cfg.signature_ramp_start + (1.0 - cfg.signature_ramp_start) * np.arange(span) / max(span, 1)
        for ch in cfg.signature_channels:
            # instantaneous frequency drifts slowly across the band
            drift = rng.uniform(0.02, 0.06)
            phase0 = rng.uniform(0, 2 * np.pi)
            freq = (lo + hi) / 2 + (hi - lo) / 2 * np.sin(2 * np.pi * drift * t + phase0)
            phase = 2 * np.pi * np.cumsum(freq) / fs + rng.uniform(0, 2 * np.pi)
            samples[ch, i0:i_on] += (cfg.signature_uv * ramp * np.sin(phase)).astype(np.float32)
        ti = np.arange(ictal_len) / fs
        discharge = cfg.seizure_uv * np.sin(2 * np.pi * 3.0 * ti) ** 3
        samples[:, i_on : i_on + ictal_len] += discharge.astype(np.float32)

    ann = tuple(SeizureAnnotation(float(o), float(o + cfg.seizure_duration_s), "synthetic") for o in cfg.seizure_onsets)
    return Recording(samples, float(fs), ann, cfg.patient_id, cfg.channel_names)


def spaced_onsets(duration_s: float, n_seizures: int, seizure_duration_s: float = 60.0) -> tuple[float, ...]:
    """Onsets at ``duration * i / n`` for i = 1..n, pulled in so the last seizure fits."""
    onsets = [duration_s * (i + 1) / n_seizures for i in range(n_seizures)]
    onsets[-1] = min(onsets[-1], duration_s - 2 * seizure_duration_s)
    return tuple(float(math.floor(o)) for o in onsets)


# ------------------------------------------------------------------ labelling


def label_timeline(rec: Recording, preictal_minutes: float, guard_minutes: float = 60.0) -> list[IntervalLabel]:
    """Partition ``[0, duration)`` into pre-ictal, ictal, inter-ictal and excluded spans.

    Pre-ictal is ``[onset - X min, onset)``; ictal is ``[onset, offset)``;
    inter-ictal is everything farther than ``guard_minutes`` from every
    seizure boundary.  Where pre-ictal spans of consecutive seizures overlap,
    the later seizure keeps the overlap.
    """
    return label_intervals(rec.duration_s, rec.annotations, preictal_minutes, guard_minutes)


def label_intervals(duration: float, annotations, preictal_minutes: float,
                    guard_minutes: float = 60.0) -> list[IntervalLabel]:
    """:func:`label_timeline` for a bare duration and annotation list."""
    if preictal_minutes <= 0:
        raise ValueError("preictal_minutes must be positive")
    ann = tuple(sorted(annotations))
    pre = preictal_minutes * 60.0
    guard = guard_minutes * 60.0

    cuts = {0.0, duration}
    for a in ann:
        for c in (a.onset_s, a.offset_s, a.onset_s - pre, a.onset_s - guard, a.offset_s + guard):
            cuts.add(min(max(c, 0.0), duration))
    cuts = sorted(cuts)

    truncated = set()
    pieces = []
    for s, e in zip(cuts, cuts[1:]):
        mid = (s + e) / 2
        label, idx = None, None
        for i, a in enumerate(ann):
            if a.onset_s <= mid < a.offset_s:
                label, idx = "ictal", i
                break
        if label is None:
            owners = [i for i, a in enumerate(ann) if a.onset_s - pre <= mid < a.onset_s]
            if owners:
                label, idx = "preictal", owners[-1]
                truncated.update(owners[:-1])
        if label is None:
            near = any(abs(mid - b) <= guard for a in ann for b in (a.onset_s, a.offset_s))
            label = "excluded" if near else "interictal"
            if label == "interictal":
                idx = next((i for i, a in enumerate(ann) if a.onset_s > mid), None)
        if pieces and pieces[-1].label == label and pieces[-1].seizure_index == idx:
            pieces[-1] = replace(pieces[-1], end_s=e)
        else:
            pieces.append(IntervalLabel(s, e, label, idx))
    for i in sorted(truncated):
        warnings.warn(
            f"pre-ictal span of seizure {i} overlaps the next seizure's and was truncated",
            TimelineWarning,
            stacklevel=2,
        )
    return pieces


def split_seizures(rec: Recording) -> SplitPlan:
    """Chronological split: the first floor(2n/3) seizures train, the rest test."""
    n = len(rec.annotations)
    if n < 2:
        raise ValueError(f"need at least 2 seizures to split, recording has {n}")
    n_train = min(2 * n // 3, n - 1)
    return SplitPlan(tuple(range(n_train)), tuple(range(n_train, n)))
