import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from eegrisk.forecast import (
    AlarmEvent,
    AlarmState,
    ForecastParams,
    Forecaster,
    Smoother,
    alarm_step,
    firing_power,
    read_alarms_csv,
    read_timeline_csv,
    run_forecaster,
    smooth,
    write_alarms_csv,
    write_timeline_csv,
)
from oracles import brute_forecast


def test_params_defaults():
    p = ForecastParams(0.5, 0.5, 40)
    assert p.sop_min == 20 and p.sph_s == 300 and p.sop_s == 1200 and p.window == 2400
    with pytest.raises(ValueError):
        ForecastParams(0.5, 0.5, 0.001)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
@settings(max_examples=100, deadline=None)
def test_smoother_is_exact_trailing_mean(xs):
    sm = Smoother(7)
    for i, x in enumerate(xs):
        window = xs[max(0, i - 6) : i + 1]
        assert sm.push(x) == math.fsum(window) / len(window)


def test_smoothing_does_not_drift():
    rng = np.random.default_rng(0)
    xs = rng.random(20000)
    xs[:100] = 1e12  # huge early values must not leave a residue in later sums
    out = smooth(xs)
    assert out[-1] == math.fsum(xs[-60:]) / 60


def test_firing_power_fixed_denominator():
    flags = np.ones(5, dtype=np.int8)
    assert_array_equal(firing_power(flags, 1 / 6), [0.1, 0.2, 0.3, 0.4, 0.5])  # 10-sample window
    full = firing_power(np.ones(700), 10)
    assert full[599] == 1.0 and full[-1] == 1.0
    assert full[299] == 0.5


def test_strict_thresholds():
    raw = np.full(600, 0.5)
    tl, alarms = run_forecaster(raw, ForecastParams(0.5, 0.1, 1))
    assert tl.fp.max() == 0 and not alarms
    tl, alarms = run_forecaster(raw, ForecastParams(0.49, 0.99, 1))
    assert tl.fp[-1] == 1.0 and alarms[0].t_alarm_s == 59.0  # first full window
    tl, alarms = run_forecaster(raw, ForecastParams(0.49, 1.0, 1))
    assert not alarms


def test_refractory_period():
    raw = np.ones(3 * 3600)
    p = ForecastParams(0.5, 0.5, 10)
    _, alarms = run_forecaster(raw, p)
    times = [a.t_alarm_s for a in alarms]
    assert times[0] == 300.0  # first sample with more than half of 600 set
    assert all(b - a == p.sph_s + p.sop_s + 1 for a, b in zip(times, times[1:]))
    a = alarms[0]
    assert (a.sop_start_s, a.sop_end_s) == (600.0, 900.0)


def test_alarm_step_rejects_time_going_backwards():
    p = ForecastParams(0.5, 0.5, 10)
    state, _ = alarm_step(AlarmState(), 10.0, 0.0, p)
    with pytest.raises(ValueError):
        alarm_step(state, 10.0, 0.0, p)


@pytest.mark.parametrize("seed", range(5))
def test_streaming_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    raw = np.clip(np.cumsum(rng.normal(0, 0.05, 2400)) % 1.0, 0, 1)
    p = ForecastParams(float(rng.choice([0.3, 0.5, 0.7])), float(rng.choice([0.2, 0.5])), 10)
    sm_ref, fp_ref, alarms_ref = brute_forecast(list(raw), p.Z, p.Y, p.X_min)
    f = Forecaster(p)
    streamed, fps, alarms = [], [], []
    for t, x in enumerate(raw):
        point, fp, alarm = f.push(float(t), float(x))
        streamed.append(point.smoothed)
        fps.append(fp)
        if alarm:
            alarms.append(alarm.t_alarm_s)
    assert_array_equal(streamed, sm_ref)
    assert_array_equal(fps, fp_ref)
    assert alarms == alarms_ref
    tl, batch_alarms = run_forecaster(raw, p)
    assert_array_equal(tl.smoothed, sm_ref)
    assert_array_equal(tl.fp, fp_ref)
    assert [a.t_alarm_s for a in batch_alarms] == alarms_ref
    assert tl.alarm_flag.sum() == len(alarms_ref)


def test_csv_round_trip(tmp_path):
    raw = np.random.default_rng(0).random(300)
    tl, _ = run_forecaster(raw, ForecastParams(0.5, 0.2, 1))
    back = read_timeline_csv(write_timeline_csv(tl, tmp_path / "t.csv"))
    for k in ("t_s", "raw_p", "smoothed", "fp", "alarm_flag"):
        assert_array_equal(getattr(back, k), getattr(tl, k))
    alarms = [AlarmEvent(1.0, 301.0, 601.0, "true-positive"), AlarmEvent(0.1 + 0.2, 1.5, 2.5)]
    assert read_alarms_csv(write_alarms_csv(alarms, tmp_path / "a.csv")) == alarms
