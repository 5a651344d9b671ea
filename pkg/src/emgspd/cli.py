"""``emgspd`` command line: synth, preprocess, featurize, train, decode, eval, fit-scaling.

Exit codes: 0 success, 1 usage error, 2 data error. Progress goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

from . import __version__
from .config import RunConfig, parse_config
from .exceptions import (
    DataError,
    DefinitenessError,
    InfeasibleAlignmentError,
    NumericError,
    ParameterError,
)

log = logging.getLogger("emgspd")

INTERFACE_VERSION = 1

DEFAULTS = {
    "synth": {"spec": None, "out": None},
    "preprocess": {
        "manifest": None, "out_dir": None, "inventory": None,
        "low_hz": 80.0, "high_hz": 1000.0, "order": 3, "zero_phase": False,
        "window_ms": 50.0, "hop_ms": 20.0, "jobs": 1,
    },
    "featurize": {
        "manifest": None, "split": None, "out_dir": None, "inventory": None,
        "kind": "spd", "eta": 0.1, "window_ms": 50.0, "hop_ms": 20.0, "diag_only": False,
        "raw": False, "low_hz": 80.0, "high_hz": 1000.0, "order": 3, "zero_phase": False,
    },
    "train": {
        "features": None, "out": None, "log": None, "inventory": None,
        "layers": 3, "hidden": 256, "unidirectional": False, "epochs": 100,
        "learning_rate": 1e-3, "weight_decay": 0.0, "batch_size": 16, "clip_norm": 5.0,
        "standardize": True, "seed": 0,
    },
    "decode": {
        "model": None, "features": None, "subset": "test", "out": None, "mode": "per",
        "lexicon": None, "lm": None, "lm_weight": 1.0, "wip": 0.0, "beam_width": 50,
        "silence": None, "timing": True, "jobs": 1,
    },
    "eval": {
        "hyps": None, "refs": None, "split": None, "subset": None, "mode": "per",
        "out": None, "csv": None, "per_sentence_mean": False,
    },
    "fit_scaling": {"csv": None, "out": None, "curve": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_hash():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _flag(p, name, type=None, help=None, choices=None):
    p.add_argument(name, type=type, default=None, help=help, choices=choices)


def _switch(p, name, help=None):
    dest = name.lstrip("-").replace("-", "_")
    p.add_argument(name, dest=dest, action="store_const", const=True, default=None, help=help)


def _filter_flags(p, jobs=False):
    _flag(p, "--low-hz", float, "bandpass low edge (Hz), default 80")
    _flag(p, "--high-hz", float, "bandpass high edge (Hz), default 1000")
    _flag(p, "--order", int, "Butterworth order, default 3")
    _switch(p, "--zero-phase", "forward-backward filtering instead of causal")
    if jobs:
        _flag(p, "--jobs", int, "worker processes, default 1")


def make_parser():
    parser = _Parser(prog="emgspd", description="Silent-speech EMG to phonemes and words.")
    parser.add_argument("--version", action="store_true", help="print version and exit")
    parser.add_argument("--config", help="key = value file; flags override it")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _flag(p, "--spec", help="synthetic spec JSON (defaults if omitted)")
    _flag(p, "--out", help="output directory")

    p = sub.add_parser("preprocess", help="reference, bandpass, cut and z-score sentences")
    _flag(p, "--manifest", help="input manifest (JSON Lines)")
    _flag(p, "--out-dir", help="output directory")
    _flag(p, "--inventory", help="phoneme inventory file")
    _filter_flags(p, jobs=True)
    _flag(p, "--window-ms", float, "window length used to flag short sentences")
    _flag(p, "--hop-ms", float)

    p = sub.add_parser("featurize", help="SPD or spectrogram frames")
    _flag(p, "--manifest", help="manifest, normally the output of preprocess")
    _flag(p, "--split", help="split JSON (default: split.json beside the manifest)")
    _flag(p, "--out-dir", help="feature store directory")
    _flag(p, "--inventory")
    _flag(p, "--kind", choices=["spd", "spectrogram"])
    _flag(p, "--eta", float, "shrinkage toward the scaled identity, default 0.1")
    _flag(p, "--window-ms", float)
    _flag(p, "--hop-ms", float)
    _switch(p, "--diag-only", "keep only the diagonal of each frame")
    _switch(p, "--raw", "manifest points at raw recordings; preprocess on the fly")
    _filter_flags(p)

    p = sub.add_parser("train", help="train the CTC acoustic model")
    _flag(p, "--features", help="feature store directory")
    _flag(p, "--out", help="checkpoint path")
    _flag(p, "--log", help="training log CSV (default: beside the checkpoint)")
    _flag(p, "--inventory")
    _flag(p, "--layers", int)
    _flag(p, "--hidden", int)
    _switch(p, "--unidirectional")
    _flag(p, "--epochs", int)
    _flag(p, "--learning-rate", float)
    _flag(p, "--weight-decay", float)
    _flag(p, "--batch-size", int)
    _flag(p, "--clip-norm", float)
    _flag(p, "--seed", int)

    p = sub.add_parser("decode", help="decode a feature subset to phonemes or words")
    _flag(p, "--model", help="checkpoint")
    _flag(p, "--features", help="feature store directory")
    _flag(p, "--subset", choices=["train", "validation", "test", "all"])
    _flag(p, "--out", help="JSON Lines output (default stdout)")
    _flag(p, "--mode", choices=["per", "wer"])
    _flag(p, "--lexicon")
    _flag(p, "--lm", help="ARPA language model")
    _flag(p, "--lm-weight", float)
    _flag(p, "--wip", float, "word insertion penalty")
    _flag(p, "--beam-width", int, "0 means greedy (per mode only)")
    _flag(p, "--silence", help="phoneme allowed to repeat between words")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False, default=None,
                   help="write time_ms as 0 so output is reproducible byte for byte")
    _flag(p, "--jobs", int)

    p = sub.add_parser("eval", help="error rates of decoded hypotheses")
    _flag(p, "--hyps", help="decode output")
    _flag(p, "--refs", help="manifest or feature index with phonemes and transcripts")
    _flag(p, "--split")
    _flag(p, "--subset", choices=["train", "validation", "test"])
    _flag(p, "--mode", choices=["per", "wer"])
    _flag(p, "--out", help="JSON report (default stdout)")
    _flag(p, "--csv", help="per-sentence rates")
    _switch(p, "--per-sentence-mean", "average sentence rates instead of pooling")

    p = sub.add_parser("fit-scaling", help="fit E = alpha / N^beta")
    _flag(p, "--csv", help="CSV with columns N,E")
    _flag(p, "--out", help="JSON result (default stdout)")
    _flag(p, "--curve", help="plot-ready CSV of observed and fitted E")
    return parser


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(
            "--" + k.replace("_", "-") for k in missing))


def _inventory(path, *fallback_dirs):
    from .io import PhonemeInventory, load_inventory

    if path:
        return load_inventory(path)
    for d in fallback_dirs:
        cand = Path(d) / "inventory.txt"
        if cand.exists():
            return load_inventory(cand)
    return PhonemeInventory.default()


def _copy_sidecars(src_dir, dst_dir, names):
    for name in names:
        src = Path(src_dir) / name
        if src.exists() and src.resolve() != (Path(dst_dir) / name).resolve():
            shutil.copyfile(src, Path(dst_dir) / name)


def _write_json(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg):
    from .testkit import SyntheticSpec, generate_corpus

    _require(cfg, "out")
    spec = SyntheticSpec.load(cfg["spec"]) if cfg["spec"] else SyntheticSpec()
    out = Path(cfg["out"])
    t = time.perf_counter()
    corpus = generate_corpus(spec, out)
    cfg.save(out)
    log.info("synth: %d sentences in %s (%.1f s)", len(corpus.records), out,
             time.perf_counter() - t)


def _preprocess_one(rec, out_dir, params):
    from .io import SentenceRecord, write_tensor
    from .preprocess import preprocess_record

    seg = preprocess_record(rec, **params)
    path = Path(out_dir) / "emg" / f"{rec.id}.emg"
    # reference-free channels, so stored as a plain tensor rather than a recording
    write_tensor(path, seg.data, seg.sample_rate)
    return SentenceRecord(rec.id, str(path), 0, seg.samples, rec.transcript,
                          list(rec.phonemes)), seg.samples, seg.sample_rate


def cmd_preprocess(cfg):
    from .io import load_manifest, save_manifest
    from .preprocess import WindowSpec

    _require(cfg, "manifest", "out_dir")
    src_dir = Path(cfg["manifest"]).parent
    out = Path(cfg["out_dir"])
    if out.resolve() == src_dir.resolve():
        raise UsageError("--out-dir must differ from the manifest directory")
    inventory = _inventory(cfg["inventory"], src_dir)
    records = load_manifest(cfg["manifest"], inventory)
    (out / "emg").mkdir(parents=True, exist_ok=True)
    params = {k: cfg[k] for k in ("low_hz", "high_hz", "order", "zero_phase")}
    spec = WindowSpec(cfg["window_ms"], cfg["hop_ms"])
    t = time.perf_counter()
    work = partial(_preprocess_one, out_dir=str(out), params=params)
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as pool:
            results = list(pool.map(work, records, chunksize=8))
    else:
        results = [work(r) for r in records]
    short = sum(1 for _, n, rate in results if n < spec.window_samples(rate))
    if short:
        log.warning("preprocess: %d sentence(s) shorter than one %.0f ms window", short,
                    spec.window_ms)
    save_manifest(out / "manifest.jsonl", [r for r, _, _ in results])
    _copy_sidecars(src_dir, out, ("split.json", "inventory.txt", "lexicon.txt"))
    cfg.save(out)
    log.info("preprocess: %d sentences (%.1f s)", len(results), time.perf_counter() - t)


def cmd_featurize(cfg):
    from .features import featurize_corpus
    from .io import load_manifest, load_split
    from .preprocess import WindowSpec

    _require(cfg, "manifest", "out_dir")
    src_dir = Path(cfg["manifest"]).parent
    out = Path(cfg["out_dir"])
    inventory = _inventory(cfg["inventory"], src_dir)
    records = load_manifest(cfg["manifest"], inventory)
    split_path = Path(cfg["split"]) if cfg["split"] else src_dir / "split.json"
    split = load_split(split_path)
    params = {k: cfg[k] for k in ("low_hz", "high_hz", "order", "zero_phase")}
    t = time.perf_counter()
    entries, _, skipped = featurize_corpus(
        records, split, out, kind=cfg["kind"], eta=cfg["eta"],
        spec=WindowSpec(cfg["window_ms"], cfg["hop_ms"]), diag_only=cfg["diag_only"],
        preprocessed=not cfg["raw"], preprocess_params=params)
    shutil.copyfile(split_path, out / "split.json")
    _copy_sidecars(src_dir, out, ("inventory.txt", "lexicon.txt"))
    cfg.save(out)
    log.info("featurize: %d sentences, %d skipped, frame_dim %d (%.1f s)", len(entries),
             skipped, entries[0].frame_dim if entries else 0, time.perf_counter() - t)


def _store(features_dir):
    from .features import load_feature_index
    from .io import load_split

    store = Path(features_dir)
    entries = {e.id: e for e in load_feature_index(store)}
    split = load_split(store / "split.json")
    return store, entries, split


def cmd_train(cfg):
    from .features import load_basis
    from .model import CTCAcousticModel, write_training_log

    _require(cfg, "features", "out")
    store, entries, split = _store(cfg["features"])
    inventory = _inventory(cfg["inventory"], store)

    def subset(ids):
        chosen = [entries[i] for i in ids if i in entries]
        return [e.load() for e in chosen], [inventory.encode(e.phonemes) for e in chosen], \
            [e.id for e in chosen]

    X, y, ids = subset(split.train)
    X_val, y_val, _ = subset(split.validation)
    if not X:
        raise DataError("no training sentences in the feature store")
    if not X_val:
        X_val = y_val = None
    model = CTCAcousticModel(
        n_symbols=len(inventory), n_layers=cfg["layers"], hidden=cfg["hidden"],
        bidirectional=not cfg["unidirectional"], epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"], weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"], clip_norm=cfg["clip_norm"],
        standardize=cfg["standardize"], seed=cfg["seed"])
    meta = {"inventory": list(inventory.symbols), "config": dict(cfg),
            "feature_kind": next(iter(entries.values())).kind}
    basis = load_basis(store)
    if basis is not None:
        meta["tensors"] = {"Q": basis.Q, "lambda": basis.eigenvalues}
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    model.fit(X, y, X_val, y_val, ids=ids, checkpoint_path=out, metadata=meta)
    log_path = Path(cfg["log"]) if cfg["log"] else out.with_suffix(".log.csv")
    write_training_log(log_path, model.history_)
    (out.parent / (out.name + ".config.txt")).write_text(cfg.dumps(), encoding="utf-8")
    log.info("train: N=%d parameters, best epoch %d, val loss %.4f (%.1f s)",
             model.n_parameters_, model.best_epoch_, model.best_val_loss_,
             time.perf_counter() - t)


def _decode_per(lattice, blank, width, lm, lm_weight):
    from .ctc import beam_decode, greedy_decode

    if width == 0:
        labels = greedy_decode(lattice, blank)
        score = float(sum(lattice[t].max() for t in range(len(lattice))))
        return labels, score
    labels, score = beam_decode(lattice, width, blank, lm=lm, lm_weight=lm_weight, n_best=1)[0]
    return labels, float(score)


def _timed(fn, lattice):
    t = time.perf_counter()
    result = fn(lattice)
    return result, (time.perf_counter() - t) * 1000.0


def cmd_decode(cfg):
    from .hlg import DecodingGraph, hlg_decode
    from .io import PhonemeInventory, load_lexicon
    from .lm import load_arpa
    from .model import CTCAcousticModel

    _require(cfg, "model", "features")
    model, meta, _ = CTCAcousticModel.load(cfg["model"])
    inventory = PhonemeInventory(tuple(meta["inventory"]))
    store, entries, split = _store(cfg["features"])
    if cfg["subset"] == "all":
        ids = list(split.train) + list(split.validation) + list(split.test)
    else:
        ids = list(getattr(split, cfg["subset"]))
    ids = [i for i in ids if i in entries]
    lm = load_arpa(cfg["lm"]) if cfg["lm"] else None
    if cfg["mode"] == "wer":
        if not cfg["lexicon"]:
            raise UsageError("--mode wer needs --lexicon")
        if cfg["beam_width"] < 1:
            raise UsageError("--mode wer needs --beam-width >= 1")
        graph = DecodingGraph.build(load_lexicon(cfg["lexicon"], inventory), inventory, lm,
                                    cfg["lm_weight"], cfg["wip"], cfg["silence"])
        fn = partial(hlg_decode, graph=graph, width=cfg["beam_width"])
    else:
        scorer = lm.natural_scorer(inventory.symbols) if lm is not None else None
        fn = partial(_decode_per, blank=inventory.blank_id, width=cfg["beam_width"], lm=scorer,
                     lm_weight=cfg["lm_weight"])
    t = time.perf_counter()
    lattices = model.predict_log_proba([entries[i].load() for i in ids])
    work = partial(_timed, fn)
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as pool:
            results = list(pool.map(work, lattices, chunksize=4))
    else:
        results = [work(lp) for lp in lattices]
    empty = 0
    lines = []
    for sid, (res, ms) in zip(ids, results):
        if cfg["mode"] == "wer":
            hyp, score = res.words, res.score
            empty += res.empty
        else:
            hyp, score = inventory.decode(res[0]), res[1]
        rec = {"id": sid, "hypothesis": hyp,
               "score": score if score != float("-inf") else None,
               "time_ms": round(ms, 3) if cfg["timing"] else 0}
        lines.append(json.dumps(rec, sort_keys=True))
    text = "\n".join(lines) + ("\n" if lines else "")
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if empty:
        log.warning("decode: %d sentence(s) produced no complete word hypothesis", empty)
    log.info("decode: %d sentences (%.1f s)", len(ids), time.perf_counter() - t)


def _read_jsonl(path):
    from .exceptions import FormatError

    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}: invalid JSON ({exc.msg})", lineno) from None
    return rows


def cmd_eval(cfg):
    from .io import load_split
    from .metrics import corpus_rates

    _require(cfg, "hyps", "refs")
    hyps = _read_jsonl(cfg["hyps"])
    refs = _read_jsonl(cfg["refs"])
    if cfg["subset"]:
        split_path = cfg["split"] or Path(cfg["refs"]).parent / "split.json"
        keep = set(getattr(load_split(split_path), cfg["subset"]))
        refs = [r for r in refs if r["id"] in keep]
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    by_id = {r["id"]: r for r in refs}
    missing = [h["id"] for h in hyps if h["id"] not in by_id]
    if missing:
        raise DataError(f"hypotheses without a reference: {missing[:5]}")
    pooled = not cfg["per_sentence_mean"]
    report = {"n_sentences": len(hyps), "pooled": pooled, "per": None, "wer": None}
    rows = []
    if cfg["mode"] == "per":
        ref_seqs = [by_id[h["id"]]["phonemes"] for h in hyps]
        rate, reps = corpus_rates(ref_seqs, [h["hypothesis"] for h in hyps], "phoneme",
                                  cfg["per_sentence_mean"])
        report["per"] = rate
        rows = [(h["id"], "per", r) for h, r in zip(hyps, reps)]
    else:
        ref_text = [by_id[h["id"]]["transcript"] for h in hyps]
        hyp_text = [" ".join(h["hypothesis"]) for h in hyps]
        rate, reps = corpus_rates(ref_text, hyp_text, "word", cfg["per_sentence_mean"])
        cer, creps = corpus_rates(ref_text, hyp_text, "char", cfg["per_sentence_mean"])
        report["wer"], report["cer"] = rate, cer
        rows = [(h["id"], "wer", r) for h, r in zip(hyps, reps)]
        rows += [(h["id"], "cer", r) for h, r in zip(hyps, creps)]
    if cfg["csv"]:
        with open(cfg["csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "unit", "substitutions", "insertions", "deletions",
                        "reference_length", "rate"])
            for sid, unit, r in rows:
                w.writerow([sid, unit, r.substitutions, r.insertions, r.deletions,
                            r.reference_length, repr(r.rate)])
    report["config"] = dict(cfg)
    _write_json(report, cfg["out"])


def cmd_fit_scaling(cfg):
    from .metrics import fit_scaling

    _require(cfg, "csv")
    points = []
    with open(cfg["csv"], encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                points.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if points:
                    raise DataError(f"{cfg['csv']}: bad row {row!r}") from None
                # header line
    fit = fit_scaling(points)
    if cfg["curve"]:
        with open(cfg["curve"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "E", "E_fit"])
            for n, e in sorted(points):
                w.writerow([repr(n), repr(e), repr(float(fit.predict(n)))])
    _write_json({"alpha": fit.alpha, "beta": fit.beta, "r_squared": fit.r_squared,
                 "n_points": len(points)}, cfg["out"])


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "fit-scaling": cmd_fit_scaling,
}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(f"emgspd {__version__} (build {build_hash()}, interface {INTERFACE_VERSION})")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    key = args.command.replace("-", "_")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "version",
                                                              "quiet")}
    try:
        file_values = parse_config(args.config) if args.config else None
        cfg = RunConfig.resolve(DEFAULTS[key], file_values, flags)
        COMMANDS[args.command](cfg)
    except (UsageError, ParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"emgspd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DefinitenessError, InfeasibleAlignmentError, NumericError,
            OSError, KeyError) as exc:
        print(f"emgspd {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
