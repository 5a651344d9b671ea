"""Synthetic EMG corpora and exhaustive oracles.

The generator draws one SPD covariance per phoneme class and emits, for every
phoneme of a sentence, a random-length dwell of Gaussian samples with that
covariance. Labels are stored without alignments. The oracles enumerate every
frame path of tiny lattices; they share no code with :mod:`emgspd.ctc` or
:mod:`emgspd.hlg`.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import special_ortho_group

from .exceptions import ParameterError
from .io import (
    DEFAULT_SYMBOLS,
    DatasetSplit,
    EmgRecording,
    PhonemeInventory,
    SentenceRecord,
    save_inventory,
    save_lexicon,
    save_manifest,
    save_recording,
    save_split,
)
from .spd import log_cholesky_distance

MAX_PATHS = 2_000_000


@dataclass
class SyntheticSpec:
    """Everything that determines a synthetic corpus; ``seed`` is its only randomness."""

    n_classes: int = 5
    n_channels: int = 31
    sample_rate: int = 5000
    hop_samples: int = 100
    frames_per_phoneme: tuple = (3, 8)
    sentence_length: tuple = (1, 3)  # words per sentence
    phonemes_per_word: tuple = (2, 4)
    n_words: int = 20
    spectrum: tuple = (0.2, 5.0)
    noise_scale: float = 0.1
    reference_scale: float = 1.0
    pad_samples: int = 150
    n_train: int = 400
    n_validation: int = 50
    n_test: int = 50
    min_class_distance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("frames_per_phoneme", "sentence_length", "phonemes_per_word", "spectrum"):
            setattr(self, name, tuple(getattr(self, name)))
        if not 1 <= self.n_classes <= len(DEFAULT_SYMBOLS):
            raise ParameterError(f"n_classes must be in [1, {len(DEFAULT_SYMBOLS)}]")

    @property
    def n_sentences(self):
        return self.n_train + self.n_validation + self.n_test

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    inventory: PhonemeInventory
    covariances: np.ndarray
    lexicon: dict
    records: list = field(default_factory=list)
    split: DatasetSplit | None = None
    signals: dict = field(default_factory=dict)  # id -> raw recording, in-memory corpora only


def class_covariances(spec: SyntheticSpec) -> np.ndarray:
    """Q_k diag(d_k) Q_k^T with random rotations and log-uniform spectra.

    Redrawn until every pair is at least ``min_class_distance`` apart in the
    Log-Cholesky metric.
    """
    rng = np.random.default_rng([spec.seed, 0])
    lo, hi = np.log(spec.spectrum[0]), np.log(spec.spectrum[1])
    for _ in range(100):
        covs = []
        for _k in range(spec.n_classes):
            Q = special_ortho_group.rvs(spec.n_channels, random_state=rng) if spec.n_channels > 1 \
                else np.ones((1, 1))
            d = np.exp(rng.uniform(lo, hi, spec.n_channels))
            covs.append((Q * d) @ Q.T)
        covs = np.array(covs)
        ok = all(log_cholesky_distance(covs[a], covs[b]) > spec.min_class_distance
                 for a, b in itertools.combinations(range(spec.n_classes), 2))
        if ok:
            return covs
    raise ParameterError("could not draw separable class covariances; lower min_class_distance")


def _no_repeats(seq):
    return all(a != b for a, b in zip(seq, seq[1:]))


def _vocabulary(spec: SyntheticSpec, symbols, rng) -> dict:
    lexicon, seen = {}, set()
    allow_repeat = spec.n_classes == 1
    attempts = 0
    while len(lexicon) < spec.n_words and attempts < 100 * spec.n_words:
        attempts += 1
        n = int(rng.integers(spec.phonemes_per_word[0], spec.phonemes_per_word[1] + 1))
        pron = tuple(symbols[i] for i in rng.integers(0, spec.n_classes, n))
        if pron in seen or not (allow_repeat or _no_repeats(pron)):
            continue
        seen.add(pron)
        lexicon[f"w{len(lexicon):03d}"] = [pron]
    return lexicon


def _sentence(spec, lexicon, rng):
    words = list(lexicon)
    allow_repeat = spec.n_classes == 1
    for _ in range(100):
        n = int(rng.integers(spec.sentence_length[0], spec.sentence_length[1] + 1))
        chosen = [words[i] for i in rng.integers(0, len(words), n)]
        phones = [p for w in chosen for p in lexicon[w][0]]
        if allow_repeat or _no_repeats(phones):
            return chosen, phones
    return chosen, phones


def synthesize_signal(spec: SyntheticSpec, phonemes, inventory, chol, rng) -> np.ndarray:
    """Raw (n_channels + 1, samples) float32 recording; the last row is the reference."""
    dwell = rng.integers(spec.frames_per_phoneme[0], spec.frames_per_phoneme[1] + 1,
                         len(phonemes)) * spec.hop_samples
    total = int(dwell.sum()) + 2 * spec.pad_samples
    C = spec.n_channels
    x = spec.noise_scale * rng.standard_normal((C, total))
    pos = spec.pad_samples
    for ph, n in zip(phonemes, dwell):
        k = inventory.index(ph)
        x[:, pos:pos + n] += chol[k] @ rng.standard_normal((C, n))
        pos += n
    ref = spec.reference_scale * rng.standard_normal(total)
    return np.vstack([x + ref, ref]).astype(np.float32)


def generate_corpus(spec: SyntheticSpec, out_dir=None) -> SyntheticCorpus:
    """Draw the corpus; with ``out_dir`` also write it in the on-disk formats.

    Layout: ``emg/<id>.emg``, ``manifest.jsonl``, ``split.json``,
    ``lexicon.txt``, ``inventory.txt`` and ``spec.json``.
    """
    inventory = PhonemeInventory(DEFAULT_SYMBOLS[:spec.n_classes])
    covs = class_covariances(spec)
    chol = np.linalg.cholesky(covs)
    lexicon = _vocabulary(spec, inventory.symbols, np.random.default_rng([spec.seed, 1]))
    corpus = SyntheticCorpus(spec, inventory, covs, lexicon)
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "emg").mkdir(parents=True, exist_ok=True)
    ids = [f"s{i:05d}" for i in range(spec.n_sentences)]
    for i, sid in enumerate(ids):
        rng = np.random.default_rng([spec.seed, 2, i])
        words, phones = _sentence(spec, lexicon, rng)
        data = synthesize_signal(spec, phones, inventory, chol, rng)
        path = str(out_dir / "emg" / f"{sid}.emg") if out_dir is not None else f"emg/{sid}.emg"
        rec = SentenceRecord(sid, path, spec.pad_samples, data.shape[1] - spec.pad_samples,
                             " ".join(words), phones)
        corpus.records.append(rec)
        if out_dir is not None:
            save_recording(path, EmgRecording(data, spec.sample_rate))
        else:
            corpus.signals[sid] = data
    corpus.split = DatasetSplit(ids[:spec.n_train],
                                ids[spec.n_train:spec.n_train + spec.n_validation],
                                ids[spec.n_train + spec.n_validation:])
    if out_dir is not None:
        save_manifest(out_dir / "manifest.jsonl", corpus.records)
        save_split(out_dir / "split.json", corpus.split)
        save_lexicon(out_dir / "lexicon.txt", lexicon)
        save_inventory(out_dir / "inventory.txt", inventory)
        with open(out_dir / "spec.json", "w", encoding="utf-8") as fh:
            json.dump(spec.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return corpus


# ---------------------------------------------------------------------------
# oracles


def _path_sums(lattice, blank):
    """Probability mass of every collapsed label sequence, by full path enumeration."""
    probs = np.exp(np.asarray(lattice, dtype=np.float64))
    T, K = probs.shape
    if K**T > MAX_PATHS:
        raise ParameterError(f"{K}^{T} paths exceed the enumeration guard ({MAX_PATHS})")
    sums = {}
    for path in itertools.product(range(K), repeat=T):
        p = 1.0
        for t, k in enumerate(path):
            p *= probs[t, k]
        collapsed = []
        prev = None
        for k in path:
            if k != prev and k != blank:
                collapsed.append(k)
            prev = k
        key = tuple(collapsed)
        sums[key] = sums.get(key, 0.0) + p
    return sums


def brute_force_ctc(lattice, labels, blank=None) -> float:
    """p(labels | lattice) summed over every frame path that collapses to ``labels``."""
    lattice = np.asarray(lattice)
    blank = lattice.shape[1] - 1 if blank is None else blank
    return _path_sums(lattice, blank).get(tuple(int(v) for v in labels), 0.0)


def brute_force_decode(lattice, max_len=None, blank=None):
    """Label sequence with the largest path-sum probability; ties go to the smaller tuple.

    Returns ``(labels, log_probability)``.
    """
    lattice = np.asarray(lattice)
    blank = lattice.shape[1] - 1 if blank is None else blank
    sums = _path_sums(lattice, blank)
    cands = [(seq, p) for seq, p in sums.items() if max_len is None or len(seq) <= max_len]
    seq, p = min(cands, key=lambda item: (-item[1], item[0]))
    return list(seq), math.log(p)


def brute_force_word_decode(lattice, lexicon, symbol_index, lm_log10, lm_weight=1.0,
                            word_insertion_penalty=0.0, max_words=2, blank=None):
    """Exhaustive word decoding over all sequences of 1..``max_words`` words.

    score = ln sum_pron p_ctc(phonemes) + lm_weight * ln p_lm(words) + penalty * len(words),
    with ``lm_log10(words)`` giving the sentence log10 probability. Returns
    ``(words, score)``; ties go to the lexicographically smaller word tuple.
    """
    lattice = np.asarray(lattice)
    blank = lattice.shape[1] - 1 if blank is None else blank
    sums = _path_sums(lattice, blank)
    entries = [(w, tuple(symbol_index[p] for p in pron))
               for w, prons in lexicon.items() for pron in prons]
    # pronunciation variants of the same word sequence are summed
    mass = {}
    for n in range(1, max_words + 1):
        for combo in itertools.product(entries, repeat=n):
            words = tuple(w for w, _ in combo)
            phones = tuple(i for _, pron in combo for i in pron)
            mass[words] = mass.get(words, 0.0) + sums.get(phones, 0.0)
    best = None
    for words, p in mass.items():
        if p <= 0.0:
            continue
        score = (math.log(p) + lm_weight * math.log(10.0) * lm_log10(list(words))
                 + word_insertion_penalty * len(words))
        if best is None or (-score, words) < (-best[1], best[0]):
            best = (words, score)
    if best is None:
        return [], -math.inf
    return list(best[0]), best[1]


def random_lattice(T, K, rng, peak=None):
    """Random normalized log-probability lattice; ``peak`` sharpens rows (Dirichlet-ish)."""
    logits = rng.standard_normal((T, K)) * (peak or 1.0)
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
