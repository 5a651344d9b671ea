"""On-disk formats: EMG recordings, manifests, lexicons, inventories and splits.

EMG binary layout (little-endian)::

    b"EMGS" | u16 version=1 | u32 channels | u32 sample_rate | u64 samples
    | channels * samples float32, channel-major

The same container stores generic 2-D tensors (feature matrices, eigenbases):
rows go in the ``channels`` field and columns in ``samples``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DataError,
    FormatError,
    ManifestError,
    ParameterError,
    TruncationError,
    VocabularyError,
)

MAGIC = b"EMGS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")

# 39 ARPABET phonemes plus silence; lowercase to match transcriptions like "f r iy d ay".
ARPABET = (
    "aa ae ah ao aw ay b ch d dh eh er ey f g hh ih iy jh k "
    "l m n ng ow oy p r s sh t th uh uw v w y z zh"
).split()
DEFAULT_SYMBOLS = tuple(ARPABET) + ("sil",)


@dataclass(frozen=True)
class PhonemeInventory:
    """Ordered phoneme symbols; the CTC blank takes index ``len(symbols)``."""

    symbols: tuple = DEFAULT_SYMBOLS
    blank_symbol: str = "<blank>"

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise ParameterError("phoneme inventory is empty")
        if len(set(symbols)) != len(symbols):
            raise ParameterError("phoneme inventory has duplicate symbols")
        if self.blank_symbol in symbols:
            raise ParameterError("blank symbol must not be a phoneme")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def blank_id(self) -> int:
        return len(self.symbols)

    @property
    def n_classes(self) -> int:
        """Number of model outputs, blank included."""
        return len(self.symbols) + 1

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def index(self, symbol, line=None) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise VocabularyError(symbol, line) from None

    def encode(self, phonemes, line=None) -> list:
        return [self.index(p, line) for p in phonemes]

    def decode(self, ids) -> list:
        return [self.symbols[i] for i in ids]

    @classmethod
    def default(cls):
        return cls(DEFAULT_SYMBOLS)


def load_inventory(path) -> PhonemeInventory:
    """Read one symbol per line; blank lines and ``#`` comments are skipped."""
    symbols = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                symbols.append(line)
    return PhonemeInventory(tuple(symbols))


def save_inventory(path, inventory: PhonemeInventory):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(inventory.symbols) + "\n")


# ---------------------------------------------------------------------------
# EMG binary container


@dataclass
class EmgRecording:
    """Multichannel recording; ``data`` has shape (channels, samples)."""

    data: np.ndarray
    sample_rate: int = 5000
    reference_index: int = -1

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DataError("recording data must be 2-D (channels, samples)")
        if self.channels < 2:
            raise DataError("a recording needs at least one data and one reference channel")
        if self.reference_index < 0:
            self.reference_index += self.channels
        if not 0 <= self.reference_index < self.channels:
            raise DataError(f"reference_index {self.reference_index} out of range")
        if not np.all(np.isfinite(self.data)):
            raise DataError("recording contains non-finite amplitudes")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


def write_tensor(path, array, rate=0):
    """Write a 2-D array as float32 little-endian in the EMG container."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise ParameterError("tensor container holds 2-D arrays only")
    rows, cols = array.shape
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, int(rate), cols))
        fh.write(payload)


def read_tensor(path):
    """Return ``(array, rate)``; ``array`` is float32 of shape (rows, cols)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_tensor(blob, source=str(path))


def parse_tensor(blob: bytes, source="<bytes>"):
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: file shorter than the {_HEADER.size}-byte header")
    magic, version, rows, rate, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = rows * cols * 4
    got = len(blob) - _HEADER.size
    if got != expected:
        raise TruncationError(
            f"{source}: header declares {rows}x{cols} values ({expected} bytes) "
            f"but payload has {got} bytes"
        )
    array = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return array.astype(np.float32), rate


def save_recording(path, recording: EmgRecording):
    write_tensor(path, recording.data, recording.sample_rate)


def load_recording(path, reference_index=-1) -> EmgRecording:
    """Load and validate an EMG binary file.

    Raises :class:`FormatError` for a malformed header, :class:`TruncationError`
    when the payload size disagrees with the header, and :class:`DataError`
    for non-finite samples.
    """
    data, rate = read_tensor(path)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite amplitude values")
    return EmgRecording(data, sample_rate=rate, reference_index=reference_index)


# ---------------------------------------------------------------------------
# Manifests


@dataclass
class SentenceRecord:
    id: str
    emg_path: str
    start_sample: int
    end_sample: int
    transcript: str = ""
    phonemes: list = field(default_factory=list)
    reference_index: int | None = None

    @property
    def words(self) -> list:
        return self.transcript.split()

    def to_json(self, base_dir=None) -> dict:
        path = self.emg_path
        if base_dir is not None:
            try:
                path = os.path.relpath(path, base_dir)
            except ValueError:
                pass
        out = {
            "id": self.id,
            "emg_path": str(path),
            "start_sample": self.start_sample,
            "end_sample": self.end_sample,
            "transcript": self.transcript,
            "phonemes": list(self.phonemes),
        }
        if self.reference_index is not None:
            out["reference_index"] = self.reference_index
        return out


_REQUIRED = ("id", "emg_path", "start_sample", "end_sample", "transcript", "phonemes")


def load_manifest(path, inventory: PhonemeInventory | None = None) -> list:
    """Read a JSON Lines manifest, validating phonemes against ``inventory``.

    Relative ``emg_path`` values are resolved against the manifest directory.
    """
    inventory = inventory or PhonemeInventory.default()
    base = Path(path).parent
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from None
            missing = [k for k in _REQUIRED if k not in obj]
            if missing:
                raise FormatError(f"missing keys {missing}", lineno)
            if obj["id"] in seen:
                raise ManifestError(f"line {lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            for p in obj["phonemes"]:
                inventory.index(p, lineno)
            start, end = int(obj["start_sample"]), int(obj["end_sample"])
            if not 0 <= start < end:
                raise ManifestError(f"line {lineno}: need 0 <= start_sample < end_sample")
            emg_path = Path(obj["emg_path"])
            if not emg_path.is_absolute():
                emg_path = base / emg_path
            records.append(
                SentenceRecord(
                    id=obj["id"],
                    emg_path=str(emg_path),
                    start_sample=start,
                    end_sample=end,
                    transcript=obj["transcript"],
                    phonemes=list(obj["phonemes"]),
                    reference_index=obj.get("reference_index"),
                )
            )
    return records


def save_manifest(path, records):
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(base), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Lexicon


def load_lexicon(path, inventory: PhonemeInventory | None = None) -> dict:
    """Map word -> list of pronunciations (tuples), in file order."""
    inventory = inventory or PhonemeInventory.default()
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0]
            parts = line.split()
            if not parts:
                continue
            word, phones = parts[0], parts[1:]
            if not phones:
                raise FormatError(f"word {word!r} has no phonemes", lineno)
            for p in phones:
                inventory.index(p, lineno)
            lexicon.setdefault(word, []).append(tuple(phones))
    return lexicon


def save_lexicon(path, lexicon: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for word, prons in lexicon.items():
            for pron in prons:
                fh.write(word + " " + " ".join(pron) + "\n")


# ---------------------------------------------------------------------------
# Splits


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        if any(len(s) != len(lst) for s, lst in zip(sets, (self.train, self.validation, self.test))):
            raise ManifestError("split lists contain duplicate ids")
        if sets[0] & sets[2] or sets[1] & sets[2] or sets[0] & sets[1]:
            raise ManifestError("train, validation and test ids must be disjoint")

    def to_json(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}


def make_split(ids, n_validation, n_test, seed=0) -> DatasetSplit:
    """Shuffle ``ids`` with ``seed`` and cut off validation and test parts."""
    ids = list(ids)
    if n_validation + n_test > len(ids):
        raise ParameterError("split sizes exceed number of ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    test = shuffled[:n_test]
    val = shuffled[n_test:n_test + n_validation]
    train = shuffled[n_test + n_validation:]
    return DatasetSplit(sorted(train), sorted(val), sorted(test))


def load_split(path) -> DatasetSplit:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        return DatasetSplit(list(obj["train"]), list(obj["validation"]), list(obj["test"]))
    except KeyError as exc:
        raise FormatError(f"{path}: missing key {exc}") from None


def save_split(path, split: DatasetSplit):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
