"""From per-second pre-ictal probabilities to a smoothed likelihood and alarms.

Pipeline per second: trailing 60-sample mean of the probability, strict
threshold ``Z`` on that mean, trailing firing-power fraction over ``X``
minutes with a fixed ``X*60`` denominator, and an alarm whenever the
fraction exceeds ``Y`` outside the refractory span of the previous alarm
(alarm time through the end of its occurrence period).
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._io import atomic_path

SMOOTH_WINDOW = 60
#: scale turning any float64 into an exact integer (2**-1074 is the smallest subnormal)
_EXACT_SHIFT = 1074


@dataclass(frozen=True)
class ForecastParams:
    Z: float
    Y: float
    X_min: float
    sph_min: float = 5.0
    sop_min: float | None = None

    def __post_init__(self):
        if self.sop_min is None:
            object.__setattr__(self, "sop_min", self.X_min / 2)
        if self.window < 1:
            raise ValueError(f"firing-power window of {self.X_min} min is shorter than one sample")
        if not self.sop_min > 0:
            raise ValueError("SOP must be positive")
        if self.sph_min < 0:
            raise ValueError("SPH must be non-negative")

    @property
    def window(self) -> int:
        """Firing-power window length in one-second samples."""
        return int(round(self.X_min * 60))

    @property
    def sph_s(self) -> float:
        return self.sph_min * 60.0

    @property
    def sop_s(self) -> float:
        return self.sop_min * 60.0


@dataclass(frozen=True)
class LikelihoodPoint:
    t_s: float
    raw_p: float
    smoothed: float


@dataclass(frozen=True)
class AlarmEvent:
    t_alarm_s: float
    sop_start_s: float
    sop_end_s: float
    verdict: str = "undetermined"

    @classmethod
    def at(cls, t: float, params: ForecastParams) -> AlarmEvent:
        start = t + params.sph_s
        return cls(t, start, start + params.sop_s)

    @property
    def refractory_end_s(self) -> float:
        return self.sop_end_s


def _exact(x: float) -> int:
    num, den = float(x).as_integer_ratio()
    return num * ((1 << _EXACT_SHIFT) // den)


class Smoother:
    """Trailing mean over the last ``window`` values.

    The window sum is held as an exact integer, so each output is the
    correctly rounded window sum divided by the window length, whatever
    happened earlier in the stream.
    """

    def __init__(self, window: int = SMOOTH_WINDOW):
        self.window = window
        self._buf: deque[int] = deque()
        self._sum = 0

    def push(self, x: float) -> float:
        v = _exact(x)
        self._buf.append(v)
        self._sum += v
        if len(self._buf) > self.window:
            self._sum -= self._buf.popleft()
        return (self._sum / (1 << _EXACT_SHIFT)) / len(self._buf)


class FiringPower:
    """Fraction of set flags among the last ``window`` samples, over a fixed ``window`` denominator."""

    def __init__(self, window: int):
        self.window = window
        self._buf: deque[int] = deque()
        self._count = 0

    def push(self, flag: int) -> float:
        self._buf.append(flag)
        self._count += flag
        if len(self._buf) > self.window:
            self._count -= self._buf.popleft()
        return self._count / self.window


@dataclass(frozen=True)
class AlarmState:
    last_t: float | None = None
    refractory_end: float | None = None


def alarm_step(state: AlarmState, t: float, fp: float, params: ForecastParams) -> tuple[AlarmState, AlarmEvent | None]:
    """Advance the alarm state machine by one sample."""
    if state.last_t is not None and t <= state.last_t:
        raise ValueError(f"timestamps must increase: {t} after {state.last_t}")
    if fp > params.Y and (state.refractory_end is None or t > state.refractory_end):
        alarm = AlarmEvent.at(t, params)
        return AlarmState(t, alarm.refractory_end_s), alarm
    return replace(state, last_t=t), None


def binarize(smoothed, Z: float):
    """1 where the smoothed likelihood is strictly above ``Z``."""
    if np.ndim(smoothed) == 0:
        return int(smoothed > Z)
    return (np.asarray(smoothed) > Z).astype(np.int8)


class Forecaster:
    """Streaming forecaster; feed one probability per second with :meth:`push`."""

    def __init__(self, params: ForecastParams):
        self.params = params
        self.smoother = Smoother()
        self.firing = FiringPower(params.window)
        self.state = AlarmState()

    def push(self, t: float, raw_p: float) -> tuple[LikelihoodPoint, float, AlarmEvent | None]:
        if self.state.last_t is not None and t <= self.state.last_t:
            raise ValueError(f"timestamps must increase: {t} after {self.state.last_t}")
        point = LikelihoodPoint(t, raw_p, self.smoother.push(raw_p))
        fp = self.firing.push(binarize(point.smoothed, self.params.Z))
        self.state, alarm = alarm_step(self.state, t, fp, self.params)
        return point, fp, alarm


@dataclass
class Timeline:
    t_s: np.ndarray
    raw_p: np.ndarray
    smoothed: np.ndarray
    fp: np.ndarray
    alarm_flag: np.ndarray

    def __len__(self) -> int:
        return len(self.t_s)

    def points(self) -> list[LikelihoodPoint]:
        return [LikelihoodPoint(float(t), float(r), float(s)) for t, r, s in zip(self.t_s, self.raw_p, self.smoothed)]


def smooth(raw_p, window: int = SMOOTH_WINDOW) -> np.ndarray:
    sm = Smoother(window)
    return np.array([sm.push(float(x)) for x in raw_p], dtype=np.float64)


def firing_power(flags, X_min: float) -> np.ndarray:
    """Trailing count of set flags over ``X_min*60`` samples, divided by ``X_min*60``."""
    window = int(round(X_min * 60))
    if window < 1:
        raise ValueError("firing-power window shorter than one sample")
    csum = np.concatenate([[0], np.cumsum(np.asarray(flags, dtype=np.int64))])
    idx = np.arange(1, len(csum))
    counts = csum[idx] - csum[np.maximum(idx - window, 0)]
    return counts / window


def detect_alarms(t_s, fp, params: ForecastParams) -> list[AlarmEvent]:
    """Alarms over a whole firing-power trace; same rule as :func:`alarm_step`."""
    t_s = np.asarray(t_s, dtype=np.float64)
    if len(t_s) > 1 and not np.all(np.diff(t_s) > 0):
        raise ValueError("timestamps must be strictly increasing")
    alarms = []
    refractory_end = -np.inf
    for i in np.flatnonzero(np.asarray(fp) > params.Y):
        t = float(t_s[i])
        if t > refractory_end:
            alarm = AlarmEvent.at(t, params)
            alarms.append(alarm)
            refractory_end = alarm.refractory_end_s
    return alarms


def run_forecaster(raw_p, params: ForecastParams, t_s=None, smoothed=None) -> tuple[Timeline, list[AlarmEvent]]:
    """Smooth, binarize, accumulate firing power and raise alarms over a full trace.

    ``t_s`` defaults to 0, 1, 2, ... seconds.  A precomputed ``smoothed``
    trace (it does not depend on the thresholds) can be passed to skip
    recomputing it.
    """
    raw_p = np.asarray(raw_p, dtype=np.float64)
    t_s = np.arange(len(raw_p), dtype=np.float64) if t_s is None else np.asarray(t_s, dtype=np.float64)
    if len(t_s) != len(raw_p):
        raise ValueError("timestamps and probabilities differ in length")
    if smoothed is None:
        smoothed = smooth(raw_p)
    fp = firing_power(binarize(smoothed, params.Z), params.X_min)
    alarms = detect_alarms(t_s, fp, params)
    flag = np.zeros(len(t_s), dtype=np.int8)
    if alarms:
        flag[np.searchsorted(t_s, [a.t_alarm_s for a in alarms])] = 1
    return Timeline(t_s, raw_p, np.asarray(smoothed, dtype=np.float64), fp, flag), alarms


def write_timeline_csv(timeline: Timeline, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "raw_p", "smoothed", "fp", "alarm_flag"])
            for row in zip(timeline.t_s, timeline.raw_p, timeline.smoothed, timeline.fp, timeline.alarm_flag):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])),
                            int(row[4])])
    return path


def read_timeline_csv(path) -> Timeline:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k, dt=np.float64: np.array([r[k] for r in rows], dtype=dt)  # noqa: E731
    return Timeline(col("t_s"), col("raw_p"), col("smoothed"), col("fp"), col("alarm_flag", np.int8))


def write_alarms_csv(alarms, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_alarm_s", "sop_start_s", "sop_end_s", "verdict"])
            for a in alarms:
                w.writerow([repr(a.t_alarm_s), repr(a.sop_start_s), repr(a.sop_end_s), a.verdict])
    return path


def read_alarms_csv(path) -> list[AlarmEvent]:
    with open(path, newline="") as fh:
        return [AlarmEvent(float(r["t_alarm_s"]), float(r["sop_start_s"]), float(r["sop_end_s"]), r["verdict"])
                for r in csv.DictReader(fh)]
