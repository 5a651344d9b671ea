import numpy as np
import pytest

from emgspd.testkit import SyntheticSpec, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(n_train=12, n_validation=4, n_test=4, seed=3)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory, small_spec):
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(small_spec, out)
    return out


def random_spd(rng, dim, cond=10.0):
    A = rng.standard_normal((dim, dim))
    Q, _ = np.linalg.qr(A)
    d = np.exp(rng.uniform(0, np.log(cond), dim))
    return (Q * d) @ Q.T


@pytest.fixture(scope="session")
def small_features(small_spec):
    """SPD features and label ids for the small corpus, keyed by split."""
    from emgspd.features import SpdFeaturizer
    from emgspd.io import EmgRecording
    from emgspd.preprocess import preprocess_recording

    corpus = generate_corpus(small_spec)
    segs = {r.id: preprocess_recording(EmgRecording(corpus.signals[r.id]), r.start_sample,
                                       r.end_sample) for r in corpus.records}
    labels = {r.id: corpus.inventory.encode(r.phonemes) for r in corpus.records}
    feat = SpdFeaturizer().fit([segs[i] for i in corpus.split.train])
    out = {"inventory": corpus.inventory, "featurizer": feat}
    for name in ("train", "validation", "test"):
        ids = list(getattr(corpus.split, name))
        out[name] = (feat.transform([segs[i] for i in ids]), [labels[i] for i in ids], ids)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
