"""Alarm scoring, the threshold/pre-ictal/image-type sweep, and best-combination reports."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_path
from .classifier import Network, predict_proba
from .eeg_data import IntervalLabel, Recording, SplitPlan, label_intervals
from .forecast import (
    AlarmEvent,
    ForecastParams,
    Timeline,
    binarize,
    detect_alarms,
    firing_power,
    run_forecaster,
    smooth,
    write_timeline_csv,
)
from .imaging import ImageType, build_test_stream, stack_pixels

FPR_MODES = ("interictal-hours-only", "total-test-hours")

Z_VALUES = tuple(round(0.05 * i, 2) for i in range(1, 19))
Y_VALUES = tuple(round(0.1 * i, 1) for i in range(2, 10))
X_VALUES = (10, 20, 30, 40)
IMAGE_TYPES = (ImageType.ONE_SEC, ImageType.FIVE_SEC, ImageType.TEN_SEC)

TABLE_COLUMNS = (
    "Patient",
    "Pre-Ictal Minutes",
    "Image Seconds",
    "Likelihood Threshold Z",
    "Firing Power Threshold Y",
    "Sensitivity",
    "FPR/h",
    "Hours of Testing Group",
)


class MissingNetworkError(KeyError):
    pass


def is_whole_count(sensitivity: float, n_seizures: int, tol: float = 1e-9) -> bool:
    """True when ``sensitivity * n_seizures`` is a whole number of predicted seizures."""
    k = sensitivity * n_seizures
    return abs(k - round(k)) <= tol


@dataclass(frozen=True)
class SweepGrid:
    Z_values: tuple[float, ...] = Z_VALUES
    Y_values: tuple[float, ...] = Y_VALUES
    X_values: tuple[float, ...] = X_VALUES
    image_types: tuple[ImageType, ...] = IMAGE_TYPES

    def __post_init__(self):
        object.__setattr__(self, "image_types", tuple(ImageType.parse(t) for t in self.image_types))

    @property
    def networks(self) -> list[tuple[ImageType, float]]:
        return list(itertools.product(self.image_types, self.X_values))

    def __len__(self) -> int:
        return len(self.Z_values) * len(self.Y_values) * len(self.X_values) * len(self.image_types)


@dataclass(frozen=True)
class EvalResult:
    image_type: str
    X_min: float
    Z: float
    Y: float
    sensitivity: float
    fpr_h: float
    n_test_seizures: int
    test_hours: float
    false_alarms: int = 0
    denominator_hours: float = 0.0
    alarms: tuple[AlarmEvent, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.sensitivity <= 1.0:
            raise ValueError(f"sensitivity {self.sensitivity} outside [0, 1]")
        if self.n_test_seizures < 1:
            raise ValueError("need at least one test seizure")
        if not is_whole_count(self.sensitivity, self.n_test_seizures):
            raise ValueError(
                f"sensitivity {self.sensitivity} is not a whole number of {self.n_test_seizures} seizures"
            )
        if self.fpr_h < 0:
            raise ValueError(f"negative FPR/h {self.fpr_h}")

    @property
    def image_seconds(self) -> int:
        return ImageType.parse(self.image_type).seconds

    @property
    def sort_key(self):
        return (self.image_seconds, self.X_min, self.Z, self.Y)


# ------------------------------------------------------------------- scoring


@dataclass(frozen=True)
class Verdicts:
    alarms: tuple[AlarmEvent, ...]
    #: per seizure onset: whether some true-positive alarm targets it
    predicted: tuple[bool, ...]

    @property
    def true_alarms(self) -> int:
        return sum(a.verdict == "true-positive" for a in self.alarms)

    @property
    def false_alarms(self) -> int:
        return sum(a.verdict == "false-positive" for a in self.alarms)

    @property
    def n_predicted(self) -> int:
        return sum(self.predicted)


def classify_alarms(alarms, onsets, data_end_s: float | None = None) -> Verdicts:
    """Mark each alarm true-positive iff a seizure onset falls inside its SOP.

    Alarms that are not true positives are false positives, except that
    when ``data_end_s`` is given an alarm whose whole SOP lies beyond the end
    of the data, with no onset between the alarm and that end, is left
    undetermined.
    """
    onsets = sorted(onsets)
    onset_arr = np.asarray(onsets, dtype=np.float64)
    predicted = [False] * len(onsets)
    out = []
    for a in alarms:
        lo = np.searchsorted(onset_arr, a.sop_start_s, side="left")
        hi = np.searchsorted(onset_arr, a.sop_end_s, side="right")
        if hi > lo:
            for i in range(lo, hi):
                predicted[i] = True
            verdict = "true-positive"
        elif (
            data_end_s is not None
            and a.sop_start_s >= data_end_s
            and not np.any((onset_arr >= a.t_alarm_s) & (onset_arr <= data_end_s))
        ):
            verdict = "undetermined"
        else:
            verdict = "false-positive"
        out.append(replace(a, verdict=verdict))
    return Verdicts(tuple(out), tuple(predicted))


def sensitivity(verdicts: Verdicts | int, n_test_seizures: int) -> float:
    if n_test_seizures < 1:
        raise ValueError("need at least one test seizure")
    k = verdicts.n_predicted if isinstance(verdicts, Verdicts) else int(verdicts)
    return k / n_test_seizures


def fpr_per_hour(verdicts: Verdicts | int, denominator_hours: float) -> float:
    """False alarms per hour; ``verdicts`` may also be a bare false-alarm count."""
    if not denominator_hours > 0:
        raise ValueError(f"FPR/h denominator must be positive, got {denominator_hours}")
    k = verdicts.false_alarms if isinstance(verdicts, Verdicts) else int(verdicts)
    return k / denominator_hours


# --------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class EvalSegment:
    """Stretch of test signal leading up to one test seizure."""

    start_s: float
    end_s: float
    onset_s: float
    seizure_index: int

    @property
    def hours(self) -> float:
        return (self.end_s - self.start_s) / 3600.0


def held_out_segments(rec: Recording | tuple, plan: SplitPlan) -> list[EvalSegment]:
    """From the previous seizure's offset (or the recording start) to each test onset."""
    ann = rec.annotations if isinstance(rec, Recording) else tuple(rec)
    out = []
    for j in plan.test_seizure_indices:
        start = ann[j - 1].offset_s if j > 0 else 0.0
        out.append(EvalSegment(start, ann[j].onset_s, ann[j].onset_s, j))
    return out


def interictal_seconds(timeline: list[IntervalLabel], start_s: float, end_s: float) -> float:
    total = 0.0
    for iv in timeline:
        if iv.label == "interictal":
            total += max(0.0, min(iv.end_s, end_s) - max(iv.start_s, start_s))
    return total


@dataclass
class ProbStream:
    """Per-second pre-ictal probabilities of one network over one test segment."""

    image_type: ImageType
    X_min: float
    segment: EvalSegment
    t_s: np.ndarray
    raw_p: np.ndarray
    smoothed: np.ndarray | None = None

    def __post_init__(self):
        if self.smoothed is None:
            self.smoothed = smooth(self.raw_p)


def compute_stream(net: Network, signal: np.ndarray, segment: EvalSegment, image_type, X_min: float,
                   fs: int = 256, chunk: int = 512) -> ProbStream:
    it = ImageType.parse(image_type)
    images = build_test_stream(signal, it, segment.start_s, segment.end_s, fs=fs)
    raw = np.empty(len(images), dtype=np.float64)
    for s in range(0, len(images), chunk):
        raw[s : s + chunk] = predict_proba(net, stack_pixels(images[s : s + chunk]))
    t = np.array([im.t_end_s for im in images], dtype=np.float64)
    return ProbStream(it, X_min, segment, t, raw)


@dataclass
class PatientBundle:
    """Everything the sweep needs for one patient.

    ``signal`` is the normalized recording; ``networks`` maps
    ``(image type, pre-ictal minutes)`` to a trained network.
    """

    patient_id: str
    signal: np.ndarray
    duration_s: float
    annotations: tuple
    plan: SplitPlan
    networks: dict
    fs: int = 256
    guard_minutes: float = 60.0

    def network(self, image_type, X_min) -> Network:
        key = (ImageType.parse(image_type), X_min)
        if key not in self.networks:
            raise MissingNetworkError(f"no trained network for {key[0].label} images, {X_min} min pre-ictal")
        return self.networks[key]


def evaluate_streams(streams: list[ProbStream], grid: SweepGrid, duration_s: float, annotations,
                     fpr_mode: str = "interictal-hours-only", guard_minutes: float = 60.0,
                     keep_alarms: bool = False) -> list[EvalResult]:
    """All (Z, Y) pairs for every (image type, X) whose streams are given.

    Streams are grouped by network; a network's test seizures are the
    segments of its streams.
    """
    if fpr_mode not in FPR_MODES:
        raise ValueError(f"unknown FPR mode {fpr_mode!r}")
    groups: dict[tuple, list[ProbStream]] = {}
    for st in streams:
        groups.setdefault((st.image_type, st.X_min), []).append(st)
    results = []
    for (it, X), group in groups.items():
        group = sorted(group, key=lambda st: st.segment.onset_s)
        timeline = label_intervals(duration_s, annotations, X, guard_minutes)
        total_h = sum(st.segment.hours for st in group)
        if fpr_mode == "total-test-hours":
            denom = total_h
        else:
            denom = sum(interictal_seconds(timeline, st.segment.start_s, st.segment.end_s) for st in group) / 3600
            if denom <= 0:
                raise ValueError(f"the test segments hold no inter-ictal time for {it.label}/{X:g} min; "
                                 "use a longer recording, a shorter guard, or fpr_mode='total-test-hours'")
        n = len(group)
        for Z in grid.Z_values:
            flags = [binarize(st.smoothed, Z) for st in group]
            for Y in grid.Y_values:
                params = ForecastParams(Z, Y, X)
                predicted = 0
                false = 0
                kept = []
                for st, fl in zip(group, flags):
                    fp = firing_power(fl, X)
                    v = classify_alarms(detect_alarms(st.t_s, fp, params), [st.segment.onset_s])
                    predicted += v.n_predicted
                    false += v.false_alarms
                    if keep_alarms:
                        kept += v.alarms
                results.append(EvalResult(it.label, X, Z, Y, predicted / n, fpr_per_hour(false, denom), n, total_h,
                                          false, denom, tuple(kept)))
    results.sort(key=lambda r: r.sort_key)
    return results


def compute_streams(bundle: PatientBundle, grid: SweepGrid) -> list[ProbStream]:
    """Run each required network once over every test segment."""
    missing = [f"{it.label}/{X} min" for it, X in grid.networks if (it, X) not in bundle.networks]
    if missing:
        raise MissingNetworkError(f"missing trained networks: {', '.join(missing)}")
    segments = held_out_segments(bundle.annotations, bundle.plan)
    return [
        compute_stream(bundle.networks[(it, X)], bundle.signal, seg, it, X, bundle.fs)
        for it, X in grid.networks
        for seg in segments
    ]


def sweep(bundle: PatientBundle, grid: SweepGrid = SweepGrid(), fpr_mode: str = "interictal-hours-only",
          streams: list[ProbStream] | None = None) -> list[EvalResult]:
    """Evaluate every grid cell; probability streams are computed once per network."""
    if streams is None:
        streams = compute_streams(bundle, grid)
    return evaluate_streams(streams, grid, bundle.duration_s, bundle.annotations, fpr_mode, bundle.guard_minutes)


# ----------------------------------------------------------------- selection


def selection_key(r: EvalResult):
    """Highest sensitivity, then lowest FPR/h, highest Z, highest Y, shortest pre-ictal, smallest image."""
    return (-r.sensitivity, r.fpr_h, -r.Z, -r.Y, r.X_min, r.image_seconds)


def select_best(results) -> EvalResult:
    results = list(results)
    if not results:
        raise ValueError("no results to choose from")
    return min(results, key=selection_key)


# ------------------------------------------------------------------ reports


def _fmt(x: float) -> str:
    return f"{round(float(x), 3):g}"


def table_row(patient_id: str, r: EvalResult) -> list[str]:
    return [
        str(patient_id),
        _fmt(r.X_min),
        str(r.image_seconds),
        _fmt(r.Z),
        _fmt(r.Y),
        _fmt(r.sensitivity),
        _fmt(r.fpr_h),
        _fmt(r.test_hours),
    ]


RESULT_FIELDS = ("image_type", "X_min", "Z", "Y", "sensitivity", "fpr_h", "n_test_seizures", "test_hours",
                 "false_alarms", "denominator_hours")


def write_results_csv(results, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_FIELDS)
            for r in results:
                w.writerow([getattr(r, k) if isinstance(getattr(r, k), str) else repr(getattr(r, k))
                            for k in RESULT_FIELDS])
    return path


def read_results_csv(path) -> list[EvalResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalResult(
                row["image_type"], float(row["X_min"]), float(row["Z"]), float(row["Y"]),
                float(row["sensitivity"]), float(row["fpr_h"]), int(row["n_test_seizures"]),
                float(row["test_hours"]), int(row["false_alarms"]), float(row["denominator_hours"]),
            ))
    return out


def read_table_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        validate_table_row(row)
    return rows


def validate_table_row(row: dict[str, str]) -> None:
    """Check a results-table row: known columns, and a sensitivity that is a whole
    number of test seizures at 4.5 h per seizure."""
    if tuple(row) != TABLE_COLUMNS:
        raise ValueError(f"unexpected columns {tuple(row)}")
    hours = float(row["Hours of Testing Group"])
    n = max(1, round(hours / 4.5))
    sens = float(row["Sensitivity"])
    # values are printed to 3 decimals
    if not is_whole_count(sens, n, tol=0.0005 * n + 1e-12):
        raise ValueError(f"sensitivity {sens} is not a whole number of {n} test seizures")


def report(results, best: EvalResult | None, directory, patient_id: str, timelines: dict | None = None) -> dict:
    """Write ``results.csv``, ``best.json``, ``table.csv``, ``table.txt`` and ``timeline_<net>.csv`` files.

    Returns a mapping of artifact name to path.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    if best is None:
        best = select_best(results)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"results": write_results_csv(results, directory / "results.csv")}

    best_doc = {k: getattr(best, k) for k in RESULT_FIELDS}
    best_doc["patient_id"] = patient_id
    best_doc["alarms"] = [
        {"t_alarm_s": a.t_alarm_s, "sop_start_s": a.sop_start_s, "sop_end_s": a.sop_end_s, "verdict": a.verdict}
        for a in best.alarms
    ]
    with atomic_path(directory / "best.json") as tmp:
        Path(tmp).write_text(json.dumps(best_doc, indent=2, sort_keys=True))
    paths["best"] = directory / "best.json"

    row = table_row(patient_id, best)
    with atomic_path(directory / "table.csv") as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            w.writerow(row)
    paths["table"] = directory / "table.csv"

    widths = [max(len(c), len(v)) for c, v in zip(TABLE_COLUMNS, row)]
    lines = [
        "  ".join(c.ljust(wd) for c, wd in zip(TABLE_COLUMNS, widths)),
        "  ".join("-" * wd for wd in widths),
        "  ".join(v.ljust(wd) for v, wd in zip(row, widths)),
    ]
    with atomic_path(directory / "table.txt") as tmp:
        Path(tmp).write_text("\n".join(lines) + "\n")
    paths["table_txt"] = directory / "table.txt"

    for name, tl in (timelines or {}).items():
        paths[f"timeline_{name}"] = write_timeline_csv(tl, directory / f"timeline_{name}.csv")
    return paths


def best_timelines(streams: list[ProbStream], best: EvalResult) -> dict[str, Timeline]:
    """Likelihood timelines of the best network's test segments, keyed ``<type>_<X>_s<seizure>``."""
    out = {}
    params = ForecastParams(best.Z, best.Y, best.X_min)
    for st in streams:
        if st.image_type.label == best.image_type and st.X_min == best.X_min:
            tl, _ = run_forecaster(st.raw_p, params, st.t_s, st.smoothed)
            out[f"{st.image_type.label}_{_fmt(st.X_min)}_s{st.segment.seizure_index}"] = tl
    return out
