"""Frame-level features: SPD spectral frames and the log-spectrogram baseline.

Both paths share the 50 ms / 20 ms framing so a sentence yields the same
number of frames either way, and both flatten a 31x31 block per frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ParameterError, SegmentTooShortError
from .io import DatasetSplit, read_tensor, write_tensor
from .preprocess import EmgSegment, WindowSpec, preprocess_record, windows
from .spd import (
    Eigenbasis,
    FrechetAccumulator,
    cholesky,
    diagonalize,
    edge_matrix,
    eigenbasis,
    regularize,
)

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-6
N_FFT = 256
N_POOLED_BINS = 31


def _as_segment(x, sample_rate):
    if isinstance(x, EmgSegment):
        return x
    return EmgSegment(np.asarray(x, dtype=np.float64), sample_rate)


def spd_frames(seg: EmgSegment, spec: WindowSpec = WindowSpec(), eta=0.1) -> np.ndarray:
    """Regularized edge matrices for every window, shape (T, C, C)."""
    return regularize(edge_matrix(windows(seg, spec)), eta)


def spd_features(seg, spec: WindowSpec = WindowSpec(), basis: Eigenbasis | None = None,
                 eta=0.1, diag_only=False, sample_rate=5000) -> np.ndarray:
    """Per window: edge matrix, regularize, congruence by ``Q``, flatten row-major.

    Returns (T, C*C), or (T, C) with ``diag_only``.
    """
    seg = _as_segment(seg, sample_rate)
    if basis is None:
        basis = Eigenbasis.identity(seg.channels)
    if basis.dim != seg.channels:
        raise ParameterError(f"basis dim {basis.dim} != segment channels {seg.channels}")
    sigma = diagonalize(spd_frames(seg, spec, eta), basis)
    if diag_only:
        return np.diagonal(sigma, axis1=1, axis2=2).copy()
    return sigma.reshape(sigma.shape[0], -1)


def pooling_groups(n_bins=N_FFT // 2 + 1, n_groups=N_POOLED_BINS):
    """Contiguous bin groups; the larger groups sit at the high-frequency end.

    For 129 bins into 31 groups: 26 groups of 4 bins, then 5 groups of 5.
    """
    base, extra = divmod(n_bins, n_groups)
    sizes = [base] * (n_groups - extra) + [base + 1] * extra
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def spectrogram_features(seg, spec: WindowSpec = WindowSpec(), n_fft=N_FFT,
                         n_groups=N_POOLED_BINS, sample_rate=5000) -> np.ndarray:
    """Log-magnitude STFT pooled to ``n_groups`` bins per channel, shape (T, C*n_groups).

    Each 250-sample window gets a periodic Hann taper and is zero-padded to
    ``n_fft``. Log is taken before average pooling.
    """
    seg = _as_segment(seg, sample_rate)
    frames = windows(seg, spec)  # (T, C, W)
    w = frames.shape[-1]
    if w > n_fft:
        raise ParameterError(f"window of {w} samples exceeds n_fft={n_fft}")
    taper = np.hanning(w + 1)[:-1]
    mag = np.abs(np.fft.rfft(frames * taper, n=n_fft, axis=-1))
    logmag = np.log(mag + LOG_FLOOR)
    pooled = np.stack([logmag[..., a:b].mean(axis=-1) for a, b in pooling_groups(mag.shape[-1], n_groups)],
                      axis=-1)
    return pooled.reshape(pooled.shape[0], -1)


class SpdFeaturizer(TransformerMixin, BaseEstimator):
    """Fit a shared eigenbasis on training segments, then emit spectral frames.

    ``fit`` accumulates the Log-Cholesky Fréchet mean of every regularized
    window and stores its eigenbasis as ``basis_``. ``transform`` maps each
    segment to a (T, C*C) array (or (T, C) with ``diag_only``).
    """

    def __init__(self, eta=0.1, window_ms=50.0, hop_ms=20.0, diag_only=False, sample_rate=5000):
        self.eta = eta
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.diag_only = diag_only
        self.sample_rate = sample_rate

    @property
    def _spec(self):
        return WindowSpec(self.window_ms, self.hop_ms)

    def partial_fit(self, X, y=None):
        for x in X:
            seg = _as_segment(x, self.sample_rate)
            if not hasattr(self, "_accumulator"):
                self._accumulator = FrechetAccumulator(seg.channels)
            self._accumulator.add(cholesky(spd_frames(seg, self._spec, self.eta)))
        self.frechet_mean_ = self._accumulator.mean()
        self.basis_ = eigenbasis(self.frechet_mean_)
        self.n_channels_ = self.basis_.dim
        return self

    def fit(self, X, y=None):
        if hasattr(self, "_accumulator"):
            del self._accumulator
        return self.partial_fit(X)

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return [spd_features(_as_segment(x, self.sample_rate), self._spec, self.basis_,
                             self.eta, self.diag_only) for x in X]


class SpectrogramFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless log-spectrogram baseline with the same framing as the SPD path."""

    def __init__(self, window_ms=50.0, hop_ms=20.0, n_fft=N_FFT, n_groups=N_POOLED_BINS,
                 sample_rate=5000):
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.n_fft = n_fft
        self.n_groups = n_groups
        self.sample_rate = sample_rate

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        spec = WindowSpec(self.window_ms, self.hop_ms)
        return [spectrogram_features(_as_segment(x, self.sample_rate), spec, self.n_fft,
                                     self.n_groups) for x in X]

    def __sklearn_is_fitted__(self):
        return True


# ---------------------------------------------------------------------------
# Feature store


@dataclass
class FeatureEntry:
    id: str
    path: str
    T: int
    frame_dim: int
    kind: str
    phonemes: list
    transcript: str = ""

    def load(self) -> np.ndarray:
        values, _ = read_tensor(self.path)
        return values.astype(np.float64)


def load_segment(record, preprocessed=True, **preprocess_params) -> EmgSegment:
    """Read the sentence segment behind a manifest record.

    With ``preprocessed`` the file already holds z-scored reference-free
    channels and is only sliced; otherwise the full chain runs.
    """
    if not preprocessed:
        return preprocess_record(record, **preprocess_params)
    data, rate = read_tensor(record.emg_path)
    return EmgSegment(data[:, record.start_sample:record.end_sample].astype(np.float64), rate)


def featurize_corpus(records, split: DatasetSplit, out_dir, kind="spd", eta=0.1,
                     spec: WindowSpec = WindowSpec(), diag_only=False, preprocessed=True,
                     preprocess_params=None):
    """Featurize every split sentence; the eigenbasis comes from training frames only.

    Writes ``features/<id>.feat``, ``index.jsonl`` and, for ``kind="spd"``,
    ``basis_Q.emg`` / ``basis_lambda.emg`` under ``out_dir``. Sentences shorter
    than one window are skipped and counted. Returns ``(entries, basis, n_skipped)``.
    """
    if kind not in ("spd", "spectrogram"):
        raise ParameterError(f"unknown feature kind {kind!r}")
    preprocess_params = preprocess_params or {}
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    by_id = {r.id: r for r in records}
    wanted = list(split.train) + list(split.validation) + list(split.test)
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise ParameterError(f"split references ids absent from manifest: {missing[:5]}")

    def segments(ids):
        for sid in ids:
            yield sid, load_segment(by_id[sid], preprocessed, **preprocess_params)

    skipped = set()
    basis = None
    if kind == "spd":
        acc = None
        for sid, seg in segments(split.train):
            try:
                frames = spd_frames(seg, spec, eta)
            except SegmentTooShortError:
                skipped.add(sid)
                continue
            acc = acc or FrechetAccumulator(seg.channels)
            acc.add(cholesky(frames))
        if acc is None:
            raise ParameterError("no usable training sentence to estimate the eigenbasis")
        basis = eigenbasis(acc.mean())
        write_tensor(out_dir / "basis_Q.emg", basis.Q)
        write_tensor(out_dir / "basis_lambda.emg", basis.eigenvalues[None, :])

    entries = []
    for sid, seg in segments(wanted):
        try:
            if kind == "spd":
                values = spd_features(seg, spec, basis, eta, diag_only)
            else:
                values = spectrogram_features(seg, spec)
        except SegmentTooShortError:
            skipped.add(sid)
            continue
        rel = Path("features") / f"{sid}.feat"
        write_tensor(out_dir / rel, values, rate=int(round(1000 / spec.hop_ms)))
        rec = by_id[sid]
        entries.append(FeatureEntry(sid, str(out_dir / rel), values.shape[0], values.shape[1],
                                    kind, list(rec.phonemes), rec.transcript))
    with open(out_dir / "index.jsonl", "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({"id": e.id, "path": f"features/{e.id}.feat", "T": e.T,
                                 "frame_dim": e.frame_dim, "kind": e.kind, "hop_ms": spec.hop_ms,
                                 "phonemes": e.phonemes, "transcript": e.transcript},
                                sort_keys=True) + "\n")
    if skipped:
        log.warning("skipped %d sentence(s) shorter than one window", len(skipped))
    return entries, basis, len(skipped)


def load_feature_index(store_dir) -> list:
    store_dir = Path(store_dir)
    entries = []
    with open(store_dir / "index.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                entries.append(FeatureEntry(obj["id"], str(store_dir / obj["path"]), obj["T"],
                                            obj["frame_dim"], obj["kind"], obj.get("phonemes", []),
                                            obj.get("transcript", "")))
    return entries


def load_basis(store_dir) -> Eigenbasis | None:
    store_dir = Path(store_dir)
    if not (store_dir / "basis_Q.emg").exists():
        return None
    Q, _ = read_tensor(store_dir / "basis_Q.emg")
    lam, _ = read_tensor(store_dir / "basis_lambda.emg")
    return Eigenbasis(Q.astype(np.float64), lam[0].astype(np.float64))
