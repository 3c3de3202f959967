import json
import warnings

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from eegrisk.eeg_data import (
    CHANNEL_NAMES,
    InfeasibleLayoutError,
    Recording,
    RecordingFormatError,
    SeizureAnnotation,
    SynthConfig,
    TimelineWarning,
    check_layout,
    label_intervals,
    load_recording,
    save_recording,
    spaced_onsets,
    split_seizures,
    synth_generate,
)


def small_recording(n=512, channels=3, annotations=()):
    rng = np.random.default_rng(0)
    return Recording(rng.standard_normal((channels, n)).astype(np.float32), 256.0, annotations, "p",
                     tuple(f"C{i}" for i in range(channels)))


def test_round_trip_is_bit_exact(tmp_path):
    rec = small_recording(annotations=(SeizureAnnotation(0.5, 1.0, "synthetic"),))
    path = save_recording(rec, tmp_path / "r.json")
    back = load_recording(path)
    assert back == rec
    assert back.samples.dtype == np.float32


def test_samples_are_sample_major_little_endian(tmp_path):
    samples = np.arange(6, dtype=np.float32).reshape(2, 3)
    rec = Recording(samples, 256.0, (), "p", ("A", "B"))
    save_recording(rec, tmp_path / "r")
    raw = np.fromfile(tmp_path / "r.f32", dtype="<f4")
    assert_array_equal(raw, [0, 3, 1, 4, 2, 5])


def test_recording_is_read_only():
    rec = small_recording()
    with pytest.raises(ValueError):
        rec.samples[0, 0] = 1.0


@pytest.mark.parametrize("mutate, message", [
    (lambda h: h.update(version=99), "version"),
    (lambda h: h.pop("fs"), "malformed"),
    (lambda h: h.update(sample_count=h["sample_count"] + 1), "sample"),
])
def test_bad_headers_are_rejected(tmp_path, mutate, message):
    path = save_recording(small_recording(), tmp_path / "r.json")
    header = json.loads(path.read_text())
    mutate(header)
    path.write_text(json.dumps(header))
    with pytest.raises(RecordingFormatError, match=message):
        load_recording(path)


def test_garbage_header(tmp_path):
    path = save_recording(small_recording(), tmp_path / "r.json")
    path.write_text("{not json")
    with pytest.raises(RecordingFormatError):
        load_recording(path)


def test_overlapping_annotations_rejected():
    with pytest.raises(ValueError, match="overlapping"):
        small_recording(annotations=(SeizureAnnotation(0.1, 1.0), SeizureAnnotation(0.5, 1.5)))


def test_annotations_are_sorted():
    rec = small_recording(annotations=(SeizureAnnotation(1.0, 1.5), SeizureAnnotation(0.1, 0.5)))
    assert rec.onsets == [0.1, 1.0]


# ------------------------------------------------------------------ labels


def ann(*onsets, dur=60.0):
    return tuple(SeizureAnnotation(o, o + dur) for o in onsets)


def coverage(pieces, duration):
    assert pieces[0].start_s == 0.0 and pieces[-1].end_s == duration
    for a, b in zip(pieces, pieces[1:]):
        assert a.end_s == b.start_s


def test_timeline_partition_and_labels():
    duration = 6 * 3600.0
    pieces = label_intervals(duration, ann(3 * 3600.0), 10)
    coverage(pieces, duration)
    labels = [(p.label, p.start_s, p.end_s) for p in pieces]
    assert labels == [
        ("interictal", 0.0, 2 * 3600.0),
        ("excluded", 2 * 3600.0, 3 * 3600.0 - 600),
        ("preictal", 3 * 3600.0 - 600, 3 * 3600.0),
        ("ictal", 3 * 3600.0, 3 * 3600.0 + 60),
        ("excluded", 3 * 3600.0 + 60, 4 * 3600.0 + 60),
        ("interictal", 4 * 3600.0 + 60, duration),
    ]
    assert pieces[0].seizure_index == 0
    assert pieces[-1].seizure_index is None


def test_overlapping_preictal_goes_to_later_seizure():
    with pytest.warns(TimelineWarning):
        pieces = label_intervals(4000.0, ann(1000.0, 1500.0), 10)
    pre = [p for p in pieces if p.label == "preictal"]
    assert [(p.start_s, p.end_s, p.seizure_index) for p in pre] == [(400.0, 900.0, 0), (900.0, 1000.0, 1),
                                                                  (1060.0, 1500.0, 1)]


def test_no_warning_when_spans_are_disjoint():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        label_intervals(20000.0, ann(5000.0, 15000.0), 40)


def test_split_is_chronological():
    for n, n_train in [(2, 1), (3, 2), (4, 2), (5, 3), (6, 4)]:
        rec = small_recording(n=256 * 10, annotations=ann(*range(0, n), dur=0.5))
        plan = split_seizures(rec)
        assert plan.train_seizure_indices == tuple(range(n_train))
        assert plan.test_seizure_indices == tuple(range(n_train, n))
    with pytest.raises(ValueError):
        split_seizures(small_recording(annotations=ann(0.1, dur=0.5)))


# --------------------------------------------------------------- synthesis


def test_synth_is_deterministic_and_annotated():
    cfg = SynthConfig(1800.0, (900.0,), preictal_signature_minutes=5, seed=3, min_gap_minutes=1)
    a, b = synth_generate(cfg), synth_generate(cfg)
    assert a == b
    assert a.samples.shape == (19, 1800 * 256)
    assert a.channel_names == CHANNEL_NAMES
    assert a.annotations == (SeizureAnnotation(900.0, 960.0, "synthetic"),)
    assert synth_generate(SynthConfig(1800.0, (900.0,), 5, seed=4, min_gap_minutes=1)) != a


def test_signature_raises_band_power_before_onset():
    cfg = SynthConfig(1800.0, (1200.0,), preictal_signature_minutes=10, seed=0, min_gap_minutes=1)
    rec = synth_generate(cfg)
    fs = 256

    def band_power(ch, t0, t1):
        x = rec.samples[ch, int(t0 * fs) : int(t1 * fs)].astype(float)
        spec = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(len(x), 1 / fs)
        return spec[(f >= 18) & (f <= 24)].sum() / spec[(f >= 1) & (f <= 100)].sum()

    ch = cfg.signature_channels[0]
    assert band_power(ch, 900, 1200) > 2 * band_power(ch, 100, 400)


@pytest.mark.parametrize("onsets", [(100.0,), (2000.0, 2100.0), (3580.0,)])
def test_infeasible_layouts(onsets):
    with pytest.raises(InfeasibleLayoutError):
        check_layout(SynthConfig(3600.0, onsets, preictal_signature_minutes=10))


def test_spaced_onsets_fit():
    onsets = spaced_onsets(14 * 3600, 3)
    assert len(onsets) == 3
    assert onsets[-1] + 60 <= 14 * 3600
    check_layout(SynthConfig(14 * 3600, onsets))
