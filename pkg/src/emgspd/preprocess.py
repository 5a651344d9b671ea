"""EMG signal chain: reference subtraction, bandpass, segmentation, z-scoring, framing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DataError, ParameterError, SegmentTooShortError
from .io import EmgRecording, SentenceRecord, load_recording

VARIANCE_FLOOR = 1e-8


@dataclass
class EmgSegment:
    """Reference-free multichannel signal, shape (channels, samples)."""

    data: np.ndarray
    sample_rate: int = 5000

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError("segment data must be 2-D (channels, samples)")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    window_ms: float = 50.0
    hop_ms: float = 20.0

    def window_samples(self, sample_rate) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def validate(self, sample_rate):
        w, h = self.window_samples(sample_rate), self.hop_samples(sample_rate)
        if not w >= h >= 1:
            raise ParameterError(f"need window >= hop >= 1 sample, got window={w} hop={h}")
        return w, h


def subtract_reference(rec: EmgRecording) -> EmgSegment:
    """Drop the reference channel and subtract it from every other channel."""
    data = rec.data.astype(np.float64)
    ref = data[rec.reference_index]
    keep = [i for i in range(rec.channels) if i != rec.reference_index]
    return EmgSegment(data[keep] - ref, rec.sample_rate)


def butter_bandpass(low_hz, high_hz, sample_rate, order=3):
    """Second-order sections of the digital Butterworth bandpass (bilinear transform)."""
    nyquist = sample_rate / 2.0
    if not 0 < low_hz < high_hz < nyquist:
        raise ParameterError(
            f"need 0 < low_hz < high_hz < Nyquist ({nyquist} Hz), got {low_hz}, {high_hz}"
        )
    if order < 1:
        raise ParameterError("filter order must be >= 1")
    return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(seg: EmgSegment, low_hz=80.0, high_hz=1000.0, order=3, zero_phase=False) -> EmgSegment:
    """Filter every channel independently, zero initial state.

    A single causal pass by default; ``zero_phase=True`` runs forward-backward.
    """
    sos = butter_bandpass(low_hz, high_hz, seg.sample_rate, order)
    if zero_phase:
        out = signal.sosfiltfilt(sos, seg.data, axis=1)
    else:
        out = signal.sosfilt(sos, seg.data, axis=1)
    return EmgSegment(out, seg.sample_rate)


def segment(seg: EmgSegment, start_sample, end_sample) -> EmgSegment:
    if not 0 <= start_sample < end_sample <= seg.samples:
        raise DataError(
            f"segment bounds [{start_sample}, {end_sample}) outside [0, {seg.samples}]"
        )
    return EmgSegment(seg.data[:, start_sample:end_sample].copy(), seg.sample_rate)


def znormalize(seg: EmgSegment) -> EmgSegment:
    """Per-channel z-score over time with the population standard deviation.

    Channels whose std falls below 1e-8 are set to zero.
    """
    if seg.samples < 2:
        raise DataError("z-normalization needs at least 2 samples")
    x = seg.data
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=1, keepdims=True))
    flat = std[:, 0] < VARIANCE_FLOOR
    std[flat] = 1.0
    out = centered / std
    out[flat] = 0.0
    return EmgSegment(out, seg.sample_rate)


def frame_count(samples, window_samples, hop_samples) -> int:
    if samples < window_samples:
        return 0
    return (samples - window_samples) // hop_samples + 1


def frame_starts(samples, window_samples, hop_samples) -> np.ndarray:
    return np.arange(frame_count(samples, window_samples, hop_samples)) * hop_samples


def windows(seg: EmgSegment, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Cut (frames, channels, window_samples) blocks; trailing partial window dropped."""
    w, h = spec.validate(seg.sample_rate)
    if seg.samples < w:
        raise SegmentTooShortError(
            f"segment has {seg.samples} samples, shorter than one {w}-sample window"
        )
    view = np.lib.stride_tricks.sliding_window_view(seg.data, w, axis=1)[:, ::h]
    return np.ascontiguousarray(view.transpose(1, 0, 2))


def preprocess_recording(
    rec: EmgRecording,
    start_sample=None,
    end_sample=None,
    low_hz=80.0,
    high_hz=1000.0,
    order=3,
    zero_phase=False,
) -> EmgSegment:
    """Reference subtraction, bandpass over the whole recording, sentence cut, z-score."""
    seg = bandpass(subtract_reference(rec), low_hz, high_hz, order, zero_phase)
    start = 0 if start_sample is None else start_sample
    end = seg.samples if end_sample is None else end_sample
    return znormalize(segment(seg, start, end))


def preprocess_record(record: SentenceRecord, **params) -> EmgSegment:
    ref = -1 if record.reference_index is None else record.reference_index
    rec = load_recording(record.emg_path, reference_index=ref)
    if record.end_sample > rec.samples:
        raise DataError(
            f"{record.id}: end_sample {record.end_sample} beyond recording length {rec.samples}"
        )
    return preprocess_recording(rec, record.start_sample, record.end_sample, **params)


class EmgPreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer from raw recordings to z-scored sentence segments.

    ``transform`` accepts a list whose items are either :class:`EmgRecording`
    (processed whole) or ``(recording, start_sample, end_sample)`` tuples.
    """

    def __init__(self, low_hz=80.0, high_hz=1000.0, order=3, zero_phase=False):
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.order = order
        self.zero_phase = zero_phase

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        params = dict(low_hz=self.low_hz, high_hz=self.high_hz, order=self.order,
                      zero_phase=self.zero_phase)
        out = []
        for item in X:
            if isinstance(item, EmgRecording):
                out.append(preprocess_recording(item, **params))
            else:
                rec, start, end = item
                out.append(preprocess_recording(rec, start, end, **params))
        return out

    def __sklearn_is_fitted__(self):
        return True
