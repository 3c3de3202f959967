import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from eegrisk.eeg_data import IntervalLabel, SeizureAnnotation, label_intervals
from eegrisk.imaging import (
    ImageType,
    ImagingWarning,
    NormStats,
    balance,
    build_test_stream,
    build_train_interictal,
    build_train_preictal,
    compute_norm_stats,
    load_dataset,
    normalize,
    save_dataset,
    stack_pixels,
    window_pixels,
)
from oracles import enumerate_windows, image_from_signal

FS = 16  # small sampling rate keeps the brute-force oracles fast


def ramp_signal(channels=3, seconds=60, fs=FS):
    n = seconds * fs
    return (np.arange(channels)[:, None] * 1000 + np.arange(n)[None, :]).astype(np.float32)


@pytest.mark.parametrize("it", list(ImageType))
def test_pixel_layout_matches_oracle(it):
    sig = ramp_signal()
    for start in (0, 5, 37):
        assert_array_equal(window_pixels(sig, start, it, FS), image_from_signal(sig, start, it.seconds, FS))


def test_image_shapes():
    assert ImageType.ONE_SEC.rows(19) == 19
    assert ImageType.FIVE_SEC.rows(19) == 95
    assert ImageType.TEN_SEC.rows(19) == 190
    assert ImageType.parse("10s") is ImageType.TEN_SEC
    assert ImageType.parse(5) is ImageType.FIVE_SEC
    with pytest.raises(ValueError):
        ImageType.parse("3s")


def test_ten_minute_preictal_gives_1199_one_second_images():
    sig = np.zeros((2, 700 * 256), dtype=np.float32)
    ivs = [IntervalLabel(100.0, 700.0, "preictal", 0)]
    imgs = build_train_preictal(sig, ivs, "1s", 256)
    assert len(imgs) == 1199
    assert imgs[0].start == 100 * 256 and imgs[1].start - imgs[0].start == 128


@given(seconds=st.integers(1, 40), offset=st.integers(0, 10), it=st.sampled_from(list(ImageType)))
@settings(max_examples=60, deadline=None)
def test_preictal_windows_match_enumerator(seconds, offset, it):
    sig = ramp_signal(seconds=60)
    iv = IntervalLabel(float(offset), float(offset + seconds), "preictal", 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ImagingWarning)
        imgs = build_train_preictal(sig, [iv], it, FS)
    expected = enumerate_windows(offset * FS, (offset + seconds) * FS, it.seconds * FS, FS // 2)
    assert [im.start for im in imgs] == expected
    for im in imgs[:3]:
        assert_array_equal(im.pixels, image_from_signal(sig, im.start, it.seconds, FS))
        assert im.t_end_s == (im.start + it.seconds * FS) / FS


def test_short_preictal_span_warns():
    with pytest.warns(ImagingWarning):
        assert build_train_preictal(ramp_signal(), [IntervalLabel(0.0, 4.0, "preictal", 0)], "5s", FS) == []


def test_interictal_even_split_and_no_overlap():
    sig = ramp_signal(seconds=200)
    ivs = [IntervalLabel(0.0, 80.0, "interictal", 0), IntervalLabel(100.0, 190.0, "interictal", 1)]
    imgs = build_train_interictal(sig, ivs, "5s", 20, 2, seed=3, fs=FS)
    by_region = [sum(im.seizure_index == k for im in imgs) for k in (0, 1)]
    assert by_region == [10, 10]
    starts = sorted(im.start for im in imgs)
    assert all(b - a >= 5 * FS for a, b in zip(starts, starts[1:]))
    assert all(s % (5 * FS) == 0 for s in starts)
    again = build_train_interictal(sig, ivs, "5s", 20, 2, seed=3, fs=FS)
    assert [im.start for im in again] == [im.start for im in imgs]


def test_interictal_shortfall_moves_to_other_region():
    sig = ramp_signal(seconds=200)
    ivs = [IntervalLabel(0.0, 3.0, "interictal", 0), IntervalLabel(10.0, 190.0, "interictal", 1)]
    with pytest.warns(ImagingWarning):
        imgs = build_train_interictal(sig, ivs, "1s", 50, 2, seed=0, fs=FS)
    assert len(imgs) == 50
    assert sum(im.seizure_index == 0 for im in imgs) == 3
    with pytest.raises(ValueError, match="candidate"):
        build_train_interictal(sig, ivs, "1s", 1000, 2, fs=FS)


def test_test_stream_one_image_per_second_with_labels():
    sig = ramp_signal(seconds=100)
    timeline = label_intervals(100.0, (SeizureAnnotation(80.0, 90.0),), preictal_minutes=0.5, guard_minutes=1.0)
    imgs = build_test_stream(sig, "10s", 0.0, 80.0, timeline, FS)
    assert len(imgs) == 71
    assert_array_equal(np.diff([im.t_end_s for im in imgs]), 1.0)
    labels = {im.t_end_s: im.label for im in imgs}
    assert labels[20.0] == "interictal"  # last sample at 19.94 s
    assert labels[40.0] == "unlabeled"  # inside the guard band
    assert labels[51.0] == "preictal"
    assert labels[80.0] == "preictal"


def test_normalization_formula_and_clamp():
    x = np.array([[-3.0, 1.0, 5.0], [0.0, 2.0, 1.0]])
    stats = compute_norm_stats(x)
    assert stats.mean == pytest.approx(1.0)
    assert stats.half_range == pytest.approx(8.0)
    y = normalize(x, stats)
    assert_allclose(y, (x - 1.0) / 8.0 + 0.5)
    assert y.min() >= 0 and y.max() <= 1
    out, clamped = normalize(np.array([[100.0, 1.0]]), stats, return_clamped=True)
    assert clamped == 1 and out[0, 0] == 1.0


def test_joint_stats_equal_concatenated():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 100)), rng.standard_normal((3, 50)) * 3
    joint = compute_norm_stats([a, b], block=7)
    whole = compute_norm_stats(np.concatenate([a, b], axis=1))
    assert joint.mean == pytest.approx(whole.mean)
    assert joint.half_range == pytest.approx(whole.half_range)
    per = compute_norm_stats(a, "per-channel")
    assert per.mean.shape == (3,)
    assert NormStats.from_dict(per.to_dict()).mean.tolist() == per.mean.tolist()


def test_balance_and_dataset_round_trip(tmp_path):
    sig = ramp_signal(seconds=100)
    pre = build_train_preictal(sig, [IntervalLabel(80.0, 90.0, "preictal", 0)], "1s", FS)
    inter = build_train_interictal(sig, [IntervalLabel(0.0, 60.0, "interictal", 0)], "1s", len(pre), 1, 0, FS)
    ds = balance(pre, inter, seed=5, stats=NormStats(0.0, 1.0))
    assert ds.class_counts == {"preictal": len(pre), "interictal": len(pre)}
    assert ds.labels.sum() == len(pre)
    back = load_dataset(save_dataset(ds, tmp_path / "ds"))
    assert_array_equal(back.pixels(), ds.pixels())
    assert_array_equal(back.labels, ds.labels)
    assert back.provenance == ds.provenance
    with pytest.raises(ValueError, match="mismatch"):
        balance(pre, inter[:-1])


def test_stack_pixels_dtype():
    sig = ramp_signal()
    imgs = build_test_stream(sig, "1s", 0, 5, fs=FS)
    arr = stack_pixels(imgs)
    assert arr.shape == (5, 3, FS) and arr.dtype == np.float32
