import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emgspd.exceptions import DataError, ParameterError, SegmentTooShortError
from emgspd.io import EmgRecording, load_inventory, load_manifest, load_recording
from emgspd.preprocess import (
    EmgPreprocessor,
    EmgSegment,
    WindowSpec,
    bandpass,
    frame_count,
    frame_starts,
    preprocess_record,
    segment,
    subtract_reference,
    windows,
    znormalize,
)

FS = 5000


def analytic_gain(f, low=80.0, high=1000.0, order=3, fs=FS):
    """|H(e^jw)| of the bilinear-transformed Butterworth bandpass, in closed form."""
    warp = lambda hz: 2 * fs * np.tan(np.pi * hz / fs)
    w, w1, w2 = warp(f), warp(low), warp(high)
    x = (w * w - w1 * w2) / (w * (w2 - w1))
    return 1.0 / np.sqrt(1.0 + x ** (2 * order))


def steady_amplitude(freq, seconds=4.0):
    t = np.arange(int(seconds * FS)) / FS
    y = bandpass(EmgSegment(np.sin(2 * np.pi * freq * t)[None, :], FS)).data[0]
    tail = slice(len(t) // 2, None)
    basis = np.stack([np.sin(2 * np.pi * freq * t[tail]), np.cos(2 * np.pi * freq * t[tail])], 1)
    coef, *_ = np.linalg.lstsq(basis, y[tail], rcond=None)
    return float(np.hypot(*coef))


def test_subtract_reference_examples():
    rec = EmgRecording(np.array([[1.0, 2.0], [0.5, 0.5]]))
    np.testing.assert_array_equal(subtract_reference(rec).data, [[0.5, 1.5]])
    same = EmgRecording(np.tile([3.0, -1.0, 2.0], (4, 1)))
    assert not subtract_reference(same).data.any()


def test_subtract_reference_matches_loop(small_corpus_dir):
    rec = load_recording(next((small_corpus_dir / "emg").glob("*.emg")))
    out = subtract_reference(rec).data
    assert out.shape == (31, rec.samples)
    ref = rec.data[-1].astype(np.float64)
    for c in range(31):
        for s in range(0, rec.samples, 97):
            assert out[c, s] == float(rec.data[c, s]) - float(ref[s])


def test_subtract_reference_custom_index():
    data = np.array([[5.0, 5.0], [1.0, 2.0], [0.0, 0.0]])
    out = subtract_reference(EmgRecording(data, reference_index=1)).data
    np.testing.assert_array_equal(out, [[4.0, 3.0], [-1.0, -2.0]])


@pytest.mark.parametrize("freq", [80.0, 1000.0])
def test_cutoff_gain_minus_3db(freq):
    db = 20 * np.log10(steady_amplitude(freq))
    assert abs(db - (-3.0103)) < 0.2
    assert abs(db - 20 * np.log10(analytic_gain(freq))) < 0.05


def test_300hz_matches_analytic_response():
    assert steady_amplitude(300.0) == pytest.approx(analytic_gain(300.0), rel=0.01)


def test_dc_rejected_after_transient():
    y = bandpass(EmgSegment(np.ones((1, 2 * FS)), FS)).data[0]
    assert np.max(np.abs(y[FS:])) < 1e-3


def test_cutoffs_validated():
    seg = EmgSegment(np.zeros((1, 100)), FS)
    with pytest.raises(ParameterError):
        bandpass(seg, 80, 2600)
    with pytest.raises(ParameterError):
        bandpass(seg, 500, 100)


def test_filter_linearity(rng):
    x, y = rng.standard_normal((2, 3, 4000))
    a, b = rng.standard_normal(2)
    lhs = bandpass(EmgSegment(a * x + b * y, FS)).data
    rhs = a * bandpass(EmgSegment(x, FS)).data + b * bandpass(EmgSegment(y, FS)).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


def test_filter_bounded_over_a_million_samples(rng):
    x = rng.uniform(-1, 1, (1, 10**6))
    assert np.max(np.abs(bandpass(EmgSegment(x, FS)).data)) <= 100


def test_zero_phase_option_differs_but_keeps_gain():
    t = np.arange(4 * FS) / FS
    x = np.sin(2 * np.pi * 300 * t)[None, :]
    causal = bandpass(EmgSegment(x, FS)).data[0]
    zp = bandpass(EmgSegment(x, FS), zero_phase=True).data[0]
    assert not np.allclose(causal, zp)
    mid = slice(FS, 3 * FS)
    # forward-backward squares the magnitude and cancels the phase
    np.testing.assert_allclose(zp[mid], analytic_gain(300.0) ** 2 * x[0, mid], atol=1e-3)


def test_segment_copies():
    seg = EmgSegment(np.arange(10.0).reshape(2, 5), FS)
    full = segment(seg, 0, 5)
    np.testing.assert_array_equal(full.data, seg.data)
    full.data[0, 0] = 99
    assert seg.data[0, 0] == 0
    assert segment(seg, 4, 5).samples == 1
    with pytest.raises(DataError):
        segment(seg, 3, 6)
    with pytest.raises(DataError):
        segment(seg, 3, 3)


def test_segment_random_slice(rng):
    data = rng.standard_normal((3, 50))
    s, e = 7, 31
    out = segment(EmgSegment(data, FS), s, e).data
    for c in range(3):
        for i in range(e - s):
            assert out[c, i] == data[c, s + i]


def test_znormalize_examples():
    out = znormalize(EmgSegment(np.array([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]), FS)).data
    np.testing.assert_allclose(out[0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    assert not out[1].any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 200)),
              elements=st.floats(-1e3, 1e3)))
def test_znormalize_statistics_and_idempotence(x):
    z = znormalize(EmgSegment(x, FS)).data
    for row, raw in zip(z, x):
        if raw.std() < 1e-8 or not row.any():
            continue
        assert abs(row.mean()) < 1e-9
        assert abs(np.sqrt(np.mean((row - row.mean()) ** 2)) - 1) < 1e-9
    np.testing.assert_allclose(znormalize(EmgSegment(z, FS)).data, z, atol=1e-9)


def test_window_spec_defaults():
    spec = WindowSpec()
    assert spec.window_samples(FS) == 250 and spec.hop_samples(FS) == 100
    with pytest.raises(ParameterError):
        WindowSpec(10, 20).validate(FS)


def test_window_counts():
    assert frame_count(1000, 250, 100) == 8
    assert windows(EmgSegment(np.zeros((2, 1000)), FS)).shape == (8, 2, 250)
    assert windows(EmgSegment(np.zeros((2, 250)), FS)).shape[0] == 1
    with pytest.raises(SegmentTooShortError):
        windows(EmgSegment(np.zeros((2, 249)), FS))


@settings(max_examples=50, deadline=None)
@given(st.integers(250, 3000))
def test_window_coverage(samples):
    starts = frame_starts(samples, 250, 100)
    np.testing.assert_array_equal(starts, 100 * np.arange(len(starts)))
    assert len(starts) == (samples - 250) // 100 + 1
    x = np.arange(samples, dtype=np.float64)[None, :]
    w = windows(EmgSegment(x, FS))
    for k in (0, len(starts) - 1):
        np.testing.assert_array_equal(w[k, 0], x[0, k * 100:k * 100 + 250])


def test_record_pipeline(small_corpus_dir):
    inv = load_inventory(small_corpus_dir / "inventory.txt")
    rec = load_manifest(small_corpus_dir / "manifest.jsonl", inv)[0]
    seg = preprocess_record(rec)
    assert seg.channels == 31 and seg.samples == rec.end_sample - rec.start_sample
    np.testing.assert_allclose(seg.data.mean(axis=1), 0, atol=1e-9)
    raw = load_recording(rec.emg_path)
    out = EmgPreprocessor().fit_transform([(raw, rec.start_sample, rec.end_sample)])
    np.testing.assert_array_equal(out[0].data, seg.data)
