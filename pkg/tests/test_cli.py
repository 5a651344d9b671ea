import hashlib
import json
import subprocess
import sys

import pytest

from emgspd.cli import COMMANDS, main
from emgspd.testkit import SyntheticSpec

TRAIN = ["--layers", "1", "--hidden", "8", "--epochs", "2", "--learning-rate", "0.005"]


def tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv):
    return main(["-q", *map(str, argv)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SyntheticSpec(n_train=12, n_validation=4, n_test=4,
                                             seed=8).to_json()))
    assert run("synth", "--spec", spec, "--out", root / "raw") == 0
    assert run("preprocess", "--manifest", root / "raw/manifest.jsonl", "--out-dir",
               root / "pre") == 0
    assert run("featurize", "--manifest", root / "pre/manifest.jsonl", "--out-dir",
               root / "feat") == 0
    assert run("train", "--features", root / "feat", "--out", root / "m.ckpt", *TRAIN) == 0
    assert run("decode", "--model", root / "m.ckpt", "--features", root / "feat", "--out",
               root / "hyp.jsonl", "--no-timing") == 0
    assert run("eval", "--hyps", root / "hyp.jsonl", "--refs", root / "feat/index.jsonl",
               "--subset", "test", "--out", root / "report.json", "--csv",
               root / "rates.csv") == 0
    return root


def test_end_to_end_report(pipeline):
    report = json.loads((pipeline / "report.json").read_text())
    assert report["n_sentences"] == 4
    assert report["pooled"] is True
    assert report["per"] >= 0
    assert (pipeline / "m.log.csv").read_text().startswith("epoch,train_loss,val_loss,wall_ms")
    for d in ("raw", "pre", "feat"):
        assert (pipeline / d / "run_config.txt").exists()
    hyps = [json.loads(line) for line in (pipeline / "hyp.jsonl").read_text().splitlines()]
    assert sorted(hyps[0]) == ["hypothesis", "id", "score", "time_ms"]
    assert all(h["time_ms"] == 0 for h in hyps)


def test_word_mode(pipeline, tmp_path):
    out = tmp_path / "words.jsonl"
    assert run("decode", "--model", pipeline / "m.ckpt", "--features", pipeline / "feat",
               "--mode", "wer", "--lexicon", pipeline / "feat/lexicon.txt", "--beam-width", 5,
               "--out", out) == 0
    assert run("eval", "--hyps", out, "--refs", pipeline / "feat/index.jsonl", "--subset",
               "test", "--mode", "wer", "--out", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["wer"] is not None and report["cer"] is not None


def test_eval_count_mismatch_exits_2(pipeline, tmp_path, capsys):
    short = tmp_path / "short.jsonl"
    short.write_text((pipeline / "hyp.jsonl").read_text().splitlines()[0] + "\n")
    code = run("eval", "--hyps", short, "--refs", pipeline / "feat/index.jsonl", "--subset",
               "test")
    assert code == 2
    assert "hypotheses" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path):
    assert run("preprocess", "--manifest", tmp_path / "none.jsonl", "--out-dir",
               tmp_path / "o") == 2


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_exits_zero(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "usage:" in capsys.readouterr().out


def test_unknown_flag_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_required_exits_1():
    assert run("train") == 1


def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("emgspd 0.1.0 (build ")
    assert "interface 1" in out


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "emgspd.cli", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("emgspd")


def test_config_file_with_flag_override(pipeline, tmp_path):
    cfg = tmp_path / "run.txt"
    cfg.write_text("# shared by several subcommands\nepochs = 1\nhidden = 4\nlayers = 1\n"
                   "unidirectional = true\n")
    out = tmp_path / "m.ckpt"
    assert main(["-q", "--config", str(cfg), "train", "--features", str(pipeline / "feat"),
                 "--out", str(out), "--hidden", "6"]) == 0
    saved = (tmp_path / "m.ckpt.config.txt").read_text()
    assert "hidden = 6" in saved
    assert "epochs = 1" in saved
    assert "unidirectional = true" in saved
    assert len((tmp_path / "m.log.csv").read_text().splitlines()) == 3


def test_config_replay_reproduces_features(pipeline, tmp_path):
    # the saved config replayed as a file gives the same store
    saved = pipeline / "feat" / "run_config.txt"
    assert main(["-q", "--config", str(saved), "featurize"]) == 0
    digest = tree_digest(pipeline / "feat")
    assert main(["-q", "--config", str(saved), "featurize"]) == 0
    assert tree_digest(pipeline / "feat") == digest


def test_subcommands_are_idempotent_and_leave_inputs_alone(pipeline, tmp_path):
    raw_before = tree_digest(pipeline / "raw")
    for _ in range(2):
        assert run("preprocess", "--manifest", pipeline / "raw/manifest.jsonl", "--out-dir",
                   tmp_path / "pre") == 0
    first = tree_digest(tmp_path / "pre")
    assert run("preprocess", "--manifest", pipeline / "raw/manifest.jsonl", "--out-dir",
               tmp_path / "pre") == 0
    assert tree_digest(tmp_path / "pre") == first
    assert tree_digest(pipeline / "raw") == raw_before

    feat_before = tree_digest(pipeline / "feat")
    outs = []
    for name in ("a", "b"):
        assert run("decode", "--model", pipeline / "m.ckpt", "--features", pipeline / "feat",
                   "--out", tmp_path / f"{name}.jsonl", "--no-timing") == 0
        outs.append((tmp_path / f"{name}.jsonl").read_bytes())
    assert outs[0] == outs[1] == (pipeline / "hyp.jsonl").read_bytes()
    assert tree_digest(pipeline / "feat") == feat_before


def test_train_is_reproducible(pipeline, tmp_path):
    blobs = []
    for name in ("a", "b"):
        assert run("train", "--features", pipeline / "feat", "--out", tmp_path / f"{name}.ckpt",
                   *TRAIN) == 0
        blobs.append((tmp_path / f"{name}.ckpt").read_bytes())
    # the embedded config records the output path, so compare against a same-path rerun
    assert run("train", "--features", pipeline / "feat", "--out", tmp_path / "a.ckpt",
               *TRAIN) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == blobs[0]
    assert (pipeline / "m.ckpt").read_bytes()[:4] == b"CKPT"


def test_fit_scaling(tmp_path):
    data = tmp_path / "pts.csv"
    data.write_text("N,E\n100,0.2\n400,0.1\n")
    out, curve = tmp_path / "fit.json", tmp_path / "curve.csv"
    assert run("fit-scaling", "--csv", data, "--out", out, "--curve", curve) == 0
    fit = json.loads(out.read_text())
    assert fit["alpha"] == pytest.approx(2.0)
    assert fit["beta"] == pytest.approx(0.5)
    assert curve.read_text().splitlines()[0] == "N,E,E_fit"
    data.write_text("N,E\n100,0.2\n100,-1\n")
    assert run("fit-scaling", "--csv", data) == 1
