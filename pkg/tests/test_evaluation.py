import csv
import json

import numpy as np
import pytest

from eegrisk.eeg_data import SeizureAnnotation, SplitPlan
from eegrisk.evaluation import (
    EvalResult,
    EvalSegment,
    MissingNetworkError,
    PatientBundle,
    ProbStream,
    SweepGrid,
    TABLE_COLUMNS,
    classify_alarms,
    compute_streams,
    evaluate_streams,
    fpr_per_hour,
    held_out_segments,
    read_results_csv,
    read_table_csv,
    report,
    select_best,
    sensitivity,
    table_row,
    validate_table_row,
    write_results_csv,
)
from eegrisk.forecast import AlarmEvent, ForecastParams
from eegrisk.imaging import ImageType

H = 3600.0


def test_grid_size():
    grid = SweepGrid()
    assert len(grid) == 1728
    assert len(grid.networks) == 12
    assert grid.Z_values[0] == 0.05 and grid.Z_values[-1] == 0.9 and len(grid.Z_values) == 18
    assert grid.Y_values == (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def test_alarm_verdicts():
    p = ForecastParams(0.5, 0.5, 10)
    alarms = [AlarmEvent.at(t, p) for t in (0.0, 1000.0, 5000.0)]
    # SOP of the first alarm is [300, 600]; onsets on both closed ends count
    v = classify_alarms(alarms, [600.0])
    assert [a.verdict for a in v.alarms] == ["true-positive", "false-positive", "false-positive"]
    assert v.predicted == (True,)
    assert classify_alarms(alarms[:1], [299.0]).false_alarms == 1
    assert classify_alarms(alarms[:1], [300.0]).true_alarms == 1
    late = classify_alarms([AlarmEvent.at(5000.0, p)], [], data_end_s=5100.0)
    assert late.alarms[0].verdict == "undetermined"


def test_scores():
    assert sensitivity(2, 3) == pytest.approx(2 / 3)
    assert fpr_per_hour(3, 10.0) == 0.3
    with pytest.raises(ValueError):
        fpr_per_hour(1, 0.0)


def test_whole_count_rule():
    EvalResult("1s", 10, 0.5, 0.5, 0.5, 0.1, 2, 9.0)
    with pytest.raises(ValueError, match="whole number"):
        EvalResult("1s", 10, 0.5, 0.5, 0.5, 0.1, 3, 13.5)
    with pytest.raises(ValueError):
        EvalResult("1s", 10, 0.5, 0.5, 1.5, 0.1, 1, 4.5)


def ann(*onsets):
    return tuple(SeizureAnnotation(o, o + 60.0) for o in onsets)


def test_held_out_segments_start_at_previous_offset():
    segs = held_out_segments(ann(H, 5 * H, 9.5 * H), SplitPlan((0,), (1, 2)))
    assert segs == [EvalSegment(H + 60, 5 * H, 5 * H, 1), EvalSegment(5 * H + 60, 9.5 * H, 9.5 * H, 2)]


def constant_stream(seg, value, X=10, bump=None):
    t = np.arange(seg.start_s + 1, seg.end_s + 1)
    p = np.full(len(t), value)
    if bump is not None:
        p[(t >= bump[0]) & (t < bump[1])] = bump[2]
    return ProbStream(ImageType.ONE_SEC, X, seg, t, p)


def test_evaluate_streams_counts_and_fpr_modes():
    annotations = ann(2 * H, 7 * H)
    seg = held_out_segments(annotations, SplitPlan((0,), (1,)))[0]
    onset = seg.onset_s
    # high probability over the last 15 minutes only: detected with zero false alarms
    good = constant_stream(seg, 0.1, bump=(onset - 900, onset, 0.95))
    grid = SweepGrid(Z_values=(0.5,), Y_values=(0.5,), X_values=(10,), image_types=("1s",))
    (r,) = evaluate_streams([good], grid, 8 * H, annotations)
    assert (r.sensitivity, r.false_alarms, r.fpr_h) == (1.0, 0, 0.0)
    assert r.test_hours == pytest.approx(seg.hours)
    # inter-ictal part of the segment: offset + 1 h guard through onset - 1 h guard
    assert r.denominator_hours == pytest.approx((onset - H - (seg.start_s + H)) / H)

    noisy = constant_stream(seg, 0.1, bump=(onset - 3 * H, onset - 3 * H + 480, 0.95))
    (r1,) = evaluate_streams([noisy], grid, 8 * H, annotations)
    (r2,) = evaluate_streams([noisy], grid, 8 * H, annotations, fpr_mode="total-test-hours")
    assert r1.false_alarms == r2.false_alarms == 1 and r1.sensitivity == 0.0
    assert r1.fpr_h == pytest.approx(1 / r1.denominator_hours)
    assert r2.fpr_h == pytest.approx(1 / seg.hours)


def test_missing_network_is_named():
    bundle = PatientBundle("P", np.zeros((19, 10)), 10.0, ann(1.0, 3.0), SplitPlan((0,), (1,)), {})
    with pytest.raises(MissingNetworkError, match="1s/10"):
        compute_streams(bundle, SweepGrid(X_values=(10,), image_types=("1s",)))


def R(it="1s", X=10, Z=0.5, Y=0.5, sens=1.0, fpr=0.1):
    return EvalResult(it, X, Z, Y, sens, fpr, 1, 4.5)


def test_tie_break_order():
    assert select_best([R(sens=0.0, fpr=0.0), R(sens=1.0, fpr=0.5)]).sensitivity == 1.0
    assert select_best([R(fpr=0.2), R(fpr=0.1)]).fpr_h == 0.1
    assert select_best([R(Z=0.3), R(Z=0.8)]).Z == 0.8
    assert select_best([R(Y=0.3), R(Y=0.8)]).Y == 0.8
    assert select_best([R(X=40), R(X=10)]).X_min == 10
    assert select_best([R(it="10s"), R(it="1s")]).image_type == "1s"
    with pytest.raises(ValueError):
        select_best([])


def test_table_formatting():
    r = EvalResult("5s", 20, 0.65, 0.3, 2 / 3, 0.12345, 3, 13.5)
    assert table_row("7", r) == ["7", "20", "5", "0.65", "0.3", "0.667", "0.123", "13.5"]
    validate_table_row(dict(zip(TABLE_COLUMNS, table_row("7", r))))
    bad = dict(zip(TABLE_COLUMNS, ["7", "20", "5", "0.65", "0.3", "0.5", "0.1", "13.5"]))
    with pytest.raises(ValueError, match="whole number"):
        validate_table_row(bad)


def test_results_csv_round_trip(tmp_path):
    rs = [R(Z=0.05 * k) for k in range(1, 4)] + [EvalResult("10s", 30, 0.1 + 0.2, 0.9, 0.5, 1 / 3, 2, 9.1, 3, 9.0)]
    assert read_results_csv(write_results_csv(rs, tmp_path / "r.csv")) == rs


def test_report_outputs_reparse(tmp_path):
    rs = [R(fpr=0.2), R(Z=0.9, fpr=0.1)]
    paths = report(rs, None, tmp_path, "P1")
    rows = read_table_csv(paths["table"])
    assert rows == [dict(zip(TABLE_COLUMNS, ["P1", "10", "1", "0.9", "0.5", "1", "0.1", "4.5"]))]
    best = json.loads(paths["best"].read_text())
    assert best["Z"] == 0.9 and best["patient_id"] == "P1"
    with open(paths["results"], newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert "Likelihood Threshold Z" in paths["table_txt"].read_text()
