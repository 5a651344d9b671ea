import filecmp
import itertools
import math

import numpy as np
import pytest

from emgspd.ctc import beam_decode, ctc_loss, greedy_decode
from emgspd.exceptions import ParameterError
from emgspd.io import PhonemeInventory, load_manifest, load_recording
from emgspd.spd import log_cholesky_distance
from emgspd.testkit import (SyntheticSpec, brute_force_ctc, brute_force_decode, class_covariances,
                            generate_corpus, random_lattice, synthesize_signal)

TINY = dict(n_train=4, n_validation=2, n_test=2)


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(tree_equal(a / d, b / d) for d in cmp.common_dirs)


def test_fixed_seed_is_byte_identical(tmp_path):
    spec = SyntheticSpec(seed=4, **TINY)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    assert tree_equal(tmp_path / "a", tmp_path / "b")


def test_regenerated_from_spec_json(tmp_path):
    generate_corpus(SyntheticSpec(seed=9, **TINY), tmp_path / "a")
    spec = SyntheticSpec.load(tmp_path / "a" / "spec.json")
    generate_corpus(spec, tmp_path / "b")
    assert tree_equal(tmp_path / "a", tmp_path / "b")


def test_different_seed_differs(tmp_path):
    generate_corpus(SyntheticSpec(seed=1, **TINY), tmp_path / "a")
    generate_corpus(SyntheticSpec(seed=2, **TINY), tmp_path / "b")
    assert not tree_equal(tmp_path / "a", tmp_path / "b")


def test_covariances_spd_and_separated():
    spec = SyntheticSpec(seed=0)
    covs = class_covariances(spec)
    assert covs.shape == (5, 31, 31)
    for c in covs:
        np.linalg.cholesky(c)
        np.testing.assert_allclose(c, c.T, atol=1e-12)
        w = np.linalg.eigvalsh(c)
        assert w.min() >= 0.2 - 1e-9 and w.max() <= 5.0 + 1e-9
    for a, b in itertools.combinations(range(5), 2):
        assert log_cholesky_distance(covs[a], covs[b]) > 0.5


def test_edge_matrix_law_of_large_numbers():
    spec = SyntheticSpec(n_classes=3, noise_scale=0.0, reference_scale=0.0,
                         frames_per_phoneme=(100, 100), pad_samples=0, seed=0)
    covs = class_covariances(spec)
    inv = PhonemeInventory(("aa", "ae", "ah"))
    x = synthesize_signal(spec, ["ae"], inv, np.linalg.cholesky(covs), np.random.default_rng(0))
    samples = x[:31].astype(np.float64)
    assert samples.shape[1] == 10_000
    target = covs[1] * samples.shape[1]
    assert np.linalg.norm(samples @ samples.T - target) <= 0.05 * np.linalg.norm(target)


def test_reference_row_is_subtractable():
    spec = SyntheticSpec(n_classes=2, noise_scale=0.0, seed=0)
    covs = class_covariances(spec)
    inv = PhonemeInventory(("aa", "ae"))
    x = synthesize_signal(spec, ["aa", "ae"], inv, np.linalg.cholesky(covs),
                          np.random.default_rng(1)).astype(np.float64)
    pad = spec.pad_samples
    # noise is zero, so the padding is pure reference
    np.testing.assert_allclose(x[:31, :pad] - x[31, :pad], 0.0, atol=1e-5)


def test_single_class_sentences_repeat_one_symbol(tmp_path):
    corpus = generate_corpus(SyntheticSpec(n_classes=1, seed=2, **TINY), tmp_path)
    assert corpus.inventory.symbols == ("aa",)
    for rec in load_manifest(tmp_path / "manifest.jsonl"):
        assert set(rec.phonemes) == {"aa"}
    # every lattice over one symbol decodes to repeats of that symbol
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert set(greedy_decode(random_lattice(8, 2, rng))) <= {0}


def test_corpus_files_round_trip(tmp_path):
    spec = SyntheticSpec(seed=5, **TINY)
    corpus = generate_corpus(spec, tmp_path)
    records = load_manifest(tmp_path / "manifest.jsonl")
    assert [r.id for r in records] == [r.id for r in corpus.records]
    rec = load_recording(records[0].emg_path)
    assert rec.data.shape[0] == 32
    assert rec.sample_rate == spec.sample_rate


def test_in_memory_matches_disk(tmp_path):
    spec = SyntheticSpec(seed=6, **TINY)
    mem = generate_corpus(spec)
    generate_corpus(spec, tmp_path)
    for rec in load_manifest(tmp_path / "manifest.jsonl"):
        np.testing.assert_array_equal(load_recording(rec.emg_path).data, mem.signals[rec.id])


def test_brute_force_ctc_matches_loss(rng):
    for _ in range(40):
        T = int(rng.integers(1, 6))
        lat = random_lattice(T, 4, rng)
        labels = list(rng.integers(0, 3, rng.integers(1, T + 1)))
        p = brute_force_ctc(lat, labels)
        if p == 0.0:
            continue
        assert p == pytest.approx(math.exp(-ctc_loss(lat, labels)[0]), rel=1e-10)


def test_brute_force_ctc_edge_cases():
    lat = np.log(np.full((2, 3), 1 / 3))
    assert brute_force_ctc(lat, [0, 0, 1]) == 0.0
    one = np.log(np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05]]))
    # a deterministic-looking lattice: the single path a b carries 0.9 * 0.9
    assert brute_force_ctc(one, [0, 1]) == pytest.approx(0.81)


def test_brute_force_decode_matches_wide_beam(rng):
    for _ in range(50):
        lat = random_lattice(int(rng.integers(1, 6)), 4, rng, peak=1.5)
        labels, lp = brute_force_decode(lat)
        top, score = beam_decode(lat, width=10**6)[0]
        assert top == labels
        assert score == pytest.approx(lp, abs=1e-10)


def test_brute_force_decode_single_frame():
    lat = np.log(np.array([[0.2, 0.5, 0.3]]))
    assert brute_force_decode(lat)[0] == [1]
    lat = np.log(np.array([[0.2, 0.1, 0.7]]))
    assert brute_force_decode(lat)[0] == []


def test_brute_force_decode_uniform_is_stable():
    lat = np.log(np.full((3, 3), 1 / 3))
    first = brute_force_decode(lat)
    assert all(brute_force_decode(lat) == first for _ in range(3))


def test_enumeration_guard():
    with pytest.raises(ParameterError):
        brute_force_ctc(np.zeros((20, 5)), [0])


def test_spec_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec(n_classes=0)
