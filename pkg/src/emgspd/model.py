"""CTC acoustic model: training loop, checkpoint container and estimator wrapper."""

from __future__ import annotations

import csv
import json
import logging
import re
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_sequences
from .ctc import beam_decode, ctc_loss, greedy_decode, min_frames
from .exceptions import FormatError, NumericError, ParameterError
from .neural import (
    AdamState,
    adam_step,
    clip_gradients,
    infer_architecture,
    init_params,
    network_backward,
    network_forward,
    pad_batch,
    parameter_count,
)

log = logging.getLogger(__name__)

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: int


@dataclass
class TrainResult:
    params: dict
    best_epoch: int
    best_val_loss: float
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, tensors: dict, metadata: dict):
    """``CKPT`` | u16 version | u32 len + JSON metadata | u32 count | named float32 tensors."""
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(meta)) + meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(tensors, metadata)``; tensors come back as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        if blob[:4] != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        version, meta_len = struct.unpack_from("<HI", blob, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 10
        metadata = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 4 * size > len(blob):
                raise FormatError(f"{path}: tensor {name!r} truncated")
            tensors[name] = np.frombuffer(blob, "<f4", size, pos).reshape(shape).astype(np.float64)
            pos += 4 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return tensors, metadata


def write_training_log(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "wall_ms"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), rec.wall_ms])


# ---------------------------------------------------------------------------
# training


def _batches(lengths, batch_size, rng):
    """Length-bucketed batches in shuffled order."""
    order = np.argsort(lengths, kind="stable")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [chunks[i] for i in rng.permutation(len(chunks))]


def batch_loss(params, X, y, blank, ids=None, with_grad=True):
    """Mean CTC loss over a batch of sequences, and its parameter gradients."""
    batch, lengths = pad_batch(X)
    log_probs, cache = network_forward(params, batch, lengths)
    dlp = np.zeros_like(log_probs) if with_grad else None
    total = 0.0
    for i, (L, labels) in enumerate(zip(lengths, y)):
        lp = log_probs[:L, i]
        loss, g = ctc_loss(lp, labels, blank) if np.isfinite(lp).all() else (np.nan, None)
        if not np.isfinite(loss):
            who = ids[i] if ids is not None else i
            raise NumericError(f"non-finite CTC loss for sentence {who}")
        total += loss
        if with_grad:
            dlp[:L, i] = g
    B = len(X)
    if not with_grad:
        return total / B, None
    grads = network_backward(params, cache, dlp / B)
    return total / B, grads


def mean_loss(params, X, y, blank, batch_size=32):
    order = np.argsort([len(x) for x in X], kind="stable")
    total = 0.0
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        loss, _ = batch_loss(params, [X[j] for j in idx], [y[j] for j in idx], blank,
                             with_grad=False)
        total += loss * len(idx)
    return total / len(X)


def train(params, X_train, y_train, X_val, y_val, config: TrainConfig, blank,
          ids=None, on_best=None):
    """Adam over length-bucketed minibatches, keeping the lowest-validation-loss weights.

    Row 0 of the history is the untrained model. ``on_best(params, epoch)`` is
    called whenever validation loss improves.
    """
    rng = np.random.default_rng(config.seed)
    state = AdamState(params)
    lengths = np.array([len(x) for x in X_train])
    start = time.perf_counter()

    def elapsed():
        return int(round((time.perf_counter() - start) * 1000))

    history = [EpochRecord(0, mean_loss(params, X_train, y_train, blank),
                           mean_loss(params, X_val, y_val, blank), elapsed())]
    best_val, best_epoch = np.inf, 0
    best = {k: v.copy() for k, v in params.items()}
    for epoch in range(1, config.epochs + 1):
        running, seen = 0.0, 0
        for idx in _batches(lengths, config.batch_size, rng):
            batch_ids = [ids[j] for j in idx] if ids is not None else list(idx)
            loss, grads = batch_loss(params, [X_train[j] for j in idx],
                                     [y_train[j] for j in idx], blank, batch_ids)
            clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, state, config.learning_rate, config.weight_decay)
            running += loss * len(idx)
            seen += len(idx)
        val = mean_loss(params, X_val, y_val, blank)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, running / seen, val, elapsed()))
        log.info("epoch %d train %.4f val %.4f", epoch, running / seen, val)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best = {k: v.copy() for k, v in params.items()}
            if on_best is not None:
                on_best(best, epoch)
    return TrainResult(best, best_epoch, float(best_val), history)


# ---------------------------------------------------------------------------
# estimator


class CTCAcousticModel(BaseEstimator):
    """Frame-synchronous BiGRU phoneme recognizer trained with CTC.

    ``fit`` takes a list of (T_i, D) feature arrays and a list of label id
    sequences (ids in ``[0, n_symbols)``; the blank is ``n_symbols``).
    Inputs are standardized per feature with training-set statistics, which
    are stored alongside the weights.
    """

    def __init__(self, n_symbols=40, n_layers=3, hidden=256, bidirectional=True, epochs=100,
                 learning_rate=1e-3, weight_decay=0.0, batch_size=16, clip_norm=5.0,
                 standardize=True, beam_width=50, seed=0):
        self.n_symbols = n_symbols
        self.n_layers = n_layers
        self.hidden = hidden
        self.bidirectional = bidirectional
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.beam_width = beam_width
        self.seed = seed

    @property
    def blank_id(self):
        return self.n_symbols

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.weight_decay, self.batch_size,
                           self.seed, self.clip_norm)

    def _scale(self, X):
        return [(x - self.input_mean_) / self.input_scale_ for x in X]

    def fit(self, X, y, X_val=None, y_val=None, ids=None, checkpoint_path=None, metadata=None):
        """Train; with ``checkpoint_path`` the best weights are written on every improvement."""
        X = check_sequences(X)
        y = check_labels(y, self.n_symbols)
        if len(X) != len(y):
            raise ParameterError("X and y differ in length")
        keep = [i for i, (x, lab) in enumerate(zip(X, y)) if len(x) >= min_frames(lab)]
        if len(keep) < len(X):
            log.warning("dropping %d sequence(s) too short for their labels", len(X) - len(keep))
            X, y = [X[i] for i in keep], [y[i] for i in keep]
            ids = [ids[i] for i in keep] if ids is not None else None
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val = check_sequences(X_val, X[0].shape[1], name="X_val")
            y_val = check_labels(y_val, self.n_symbols, name="y_val")
        self.n_features_in_ = X[0].shape[1]
        frames = np.concatenate(X)
        if self.standardize:
            self.input_mean_ = frames.mean(axis=0)
            scale = frames.std(axis=0)
            self.input_scale_ = np.where(scale > 1e-8, scale, 1.0)
        else:
            self.input_mean_ = np.zeros(self.n_features_in_)
            self.input_scale_ = np.ones(self.n_features_in_)
        params = init_params(self.n_features_in_, self.hidden, self.n_layers,
                             self.n_symbols + 1, self.bidirectional, self.seed)
        self.n_parameters_ = parameter_count(self.n_features_in_, self.hidden, self.n_layers,
                                             self.n_symbols + 1, self.bidirectional)

        def on_best(best, epoch):
            if checkpoint_path is not None:
                self.params_ = best
                self.best_epoch_ = epoch
                self.save(checkpoint_path, metadata)

        result = train(params, self._scale(X), y, self._scale(X_val), y_val,
                       self.train_config(), self.blank_id, ids, on_best)
        self.params_ = result.params
        self.best_epoch_ = result.best_epoch
        self.best_val_loss_ = result.best_val_loss
        self.history_ = result.history
        return self

    def predict_log_proba(self, X, batch_size=32):
        """Per-frame log-probabilities, one (T_i, n_symbols + 1) array per input."""
        check_is_fitted(self, "params_")
        X = self._scale(check_sequences(X, self.n_features_in_))
        out = [None] * len(X)
        order = np.argsort([len(x) for x in X], kind="stable")
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            batch, lengths = pad_batch([X[j] for j in idx])
            lp, _ = network_forward(self.params_, batch, lengths)
            for k, j in enumerate(idx):
                out[j] = lp[:lengths[k], k]
        return out

    def predict(self, X, beam_width=None):
        """Best label sequence per input by prefix beam search (greedy when width is 0)."""
        width = self.beam_width if beam_width is None else beam_width
        lattices = self.predict_log_proba(X)
        if width == 0:
            return [greedy_decode(lp, self.blank_id) for lp in lattices]
        return [beam_decode(lp, width, self.blank_id, n_best=1)[0][0] for lp in lattices]

    # -- persistence --------------------------------------------------------

    def save(self, path, metadata=None):
        check_is_fitted(self, "params_")
        tensors = dict(self.params_)
        tensors["input_mean"] = self.input_mean_
        tensors["input_scale"] = self.input_scale_
        meta = dict(metadata or {})
        extra = meta.pop("tensors", {})
        tensors.update(extra)
        meta.update({
            "architecture": infer_architecture(self.params_),
            "estimator": self.get_params(),
            "n_parameters": int(self.n_parameters_),
            "best_epoch": int(getattr(self, "best_epoch_", 0)),
        })
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        """Rebuild a fitted model; returns ``(model, metadata, extra_tensors)``."""
        tensors, meta = load_checkpoint(path)
        model = cls(**meta["estimator"])
        model.input_mean_ = tensors.pop("input_mean")
        model.input_scale_ = tensors.pop("input_scale")
        names = [k for k in tensors if re.match(r"(l\d+|out)\.", k)]
        model.params_ = {k: tensors.pop(k) for k in names}
        model.n_features_in_ = model.input_mean_.shape[0]
        model.n_parameters_ = meta["n_parameters"]
        model.best_epoch_ = meta.get("best_epoch", 0)
        return model, meta, tensors


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
