"""Command-line entry point: ``neocry <subcommand> [flags]``.

Every run resolves its settings as flags > config file > defaults, writes
only inside ``--out`` and leaves a ``provenance.json`` there. Exit codes:
0 success, 1 validation error (nothing written), 2 failure during the run.
Progress goes to stderr; stdout carries one JSON summary line.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time

THREADS_ENV = "NEOCRY_THREADS"


class UsageError(Exception):
    """Invalid invocation, caught before any output is written."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


# -- flag tables ------------------------------------------------------------
# (flag, type, default, help, choices). Types double as converters for
# config-file values; bool flags are switches.

def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={raw!r} is not an integer") from None


COMMON = [
    ("--out", str, None, "output directory; nothing is written outside it (required)", None),
    ("--config", str, None, "INI file with [common] and per-subcommand sections", None),
    ("--seed", int, None, "random seed (required with --deterministic; otherwise 0)", None),
    ("--threads", int, None, f"worker cap (default: ${THREADS_ENV} or 1)", None),
    ("--deterministic", bool, False,
     "fixed-order reductions: single-threaded BLAS, explicit seed required", None),
]

TRAINING = [
    ("--pipeline", str, "ncnn", "model family", ("ncnn", "baseline")),
    ("--epochs", int, 100, "N-CNN training epochs", None),
    ("--lr", float, 1e-4, "RMSprop learning rate", None),
    ("--batch-size", int, 16, "mini-batch size", None),
    ("--augment", bool, False, "expand training originals with the 27 variants in memory",
     None),
]

COMMANDS = {
    "synth": ("write a synthetic cry dataset (WAVs + manifest.csv)", [
        ("--subjects", int, 31, "number of subjects", None),
        ("--events", int, 6, "events per subject", None),
        ("--duration", float, 1.0, "event length in seconds", None),
        ("--sample-rate", int, 8000, "sample rate in Hz", None),
        ("--contrast", str, "contour", "what separates the classes", ("contour", "timbre")),
    ]),
    "spectrogram": ("render every manifest event to a 120x120 spectrogram", [
        ("--manifest", str, None, "input manifest CSV (required)", None),
        ("--format", str, "png", "image format", ("png", "raw", "both")),
    ]),
    "augment": ("write the 27 augmented variants of every original event", [
        ("--manifest", str, None, "input manifest CSV (required)", None),
        ("--no-combinations", bool, False, "only the 9 single transforms", None),
    ]),
    "features": ("MFCC/LPCC summary features per event (features.csv)", [
        ("--manifest", str, None, "input manifest CSV (required)", None),
    ]),
    "train": ("train one model on every row of a manifest", [
        ("--manifest", str, None, "training manifest CSV (required)", None),
    ] + TRAINING),
    "evaluate": ("subject-wise cross-validation with JSON and table reports", [
        ("--manifest", str, None, "manifest CSV (required)", None),
        ("--protocol", str, "loso", "fold protocol", ("loso", "kfold10")),
    ] + TRAINING),
    "infer": ("score events with a trained model (predictions.csv)", [
        ("--model", str, None, "model file written by train (required)", None),
        ("--manifest", str, None, "manifest whose original events are scored", None),
        ("--wav", str, None, "single WAV file to score instead of a manifest", None),
    ]),
}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _options(command):
    return COMMON + COMMANDS[command][1]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neocry", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (summary, _) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        for flag, typ, default, text, choices in _options(name):
            shown = "" if default in (None, False) else f" (default: {default})"
            if typ is bool:
                p.add_argument(flag, action="store_true", default=argparse.SUPPRESS,
                               help=text + shown)
            else:
                p.add_argument(flag, type=typ, choices=choices, default=argparse.SUPPRESS,
                               help=text + shown, metavar=_dest(flag).upper())
    return parser


def resolve(command: str, given: dict) -> dict:
    """Merge defaults, the config file and explicit flags (highest wins)."""
    table = {_dest(f): (typ, default, choices) for f, typ, default, _, choices in
             _options(command)}
    cfg = {k: default for k, (_, default, _) in table.items()}
    path = given.get("config")
    if path:
        if not os.path.isfile(path):
            raise UsageError(f"config file not found: {path}")
        ini = configparser.ConfigParser()
        ini.read(path)
        for section in ("common", command):
            if not ini.has_section(section):
                continue
            for key, raw in ini.items(section):
                key = key.replace("-", "_")
                if key not in table:
                    raise UsageError(f"{path}: [{section}] unknown key {key!r}")
                typ, _, choices = table[key]
                try:
                    value = (_bool if typ is bool else typ)(raw)
                except ValueError as exc:
                    raise UsageError(f"{path}: [{section}] {key}: {exc}") from None
                if choices and value not in choices:
                    raise UsageError(f"{path}: [{section}] {key} must be one of {choices}")
                cfg[key] = value
    cfg.update(given)
    if cfg["threads"] is None:
        cfg["threads"] = _default_threads()
    if cfg["threads"] < 1:
        raise UsageError("--threads must be at least 1")
    if cfg["seed"] is None:
        if cfg["deterministic"]:
            raise UsageError("--deterministic needs an explicit --seed")
        cfg["seed"] = 0
    if not cfg["out"]:
        raise UsageError("--out is required")
    if os.path.exists(cfg["out"]) and not os.path.isdir(cfg["out"]):
        raise UsageError(f"--out {cfg['out']} exists and is not a directory")
    return cfg


# -- provenance -------------------------------------------------------------

def git_blob_hash(path) -> str:
    """Content hash as git computes it for a blob."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_provenance(out, command, cfg, inputs, status, extra=None):
    from . import __version__

    record = {"command": command, "version": __version__, "seed": cfg["seed"],
              "config": cfg, "inputs": {p: git_blob_hash(p) for p in sorted(inputs)},
              "status": status}
    if cfg.get("config"):
        with open(cfg["config"]) as fh:
            record["config_file_text"] = fh.read()
    record.update(extra or {})
    with open(os.path.join(out, "provenance.json"), "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


# -- subcommands ------------------------------------------------------------
# check_* runs before anything is written and returns the input files plus
# whatever state run_* needs; run_* does the work inside ``out``.

def _need(cfg, key):
    if not cfg.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required")


def _check_manifest(cfg):
    from .data import load_manifest

    _need(cfg, "manifest")
    path = cfg["manifest"]
    if not os.path.isfile(path):
        raise UsageError(f"manifest not found: {path}")
    manifest = load_manifest(path)
    missing = [r.wav_path for r in manifest.rows if not os.path.isfile(manifest.resolve(r))]
    if missing:
        raise UsageError(f"{path}: {len(missing)} WAV file(s) missing, first {missing[0]!r}")
    inputs = [path] + [manifest.resolve(r) for r in manifest.rows]
    return manifest, inputs


def check_synth(cfg):
    from .data import SynthConfig

    try:
        synth = SynthConfig(n_subjects=cfg["subjects"], events_per_subject=cfg["events"],
                            sample_rate=cfg["sample_rate"], duration_s=cfg["duration"],
                            contrast=cfg["contrast"], seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return [], synth


def run_synth(cfg, synth, out):
    from .data import generate_synthetic

    manifest = generate_synthetic(synth, out)
    return {"manifest": os.path.join(out, "manifest.csv"), "events": len(manifest),
            "subjects": len(manifest.subjects())}


def check_spectrogram(cfg):
    manifest, inputs = _check_manifest(cfg)
    return inputs, manifest


def run_spectrogram(cfg, manifest, out):
    from .data import load_event
    from .dsp import render_spectrogram

    for i, row in enumerate(manifest.rows, 1):
        image = render_spectrogram(load_event(manifest, row))
        if cfg["format"] in ("png", "both"):
            image.save_png(os.path.join(out, f"{row.event_id}.png"))
        if cfg["format"] in ("raw", "both"):
            image.save_raw(os.path.join(out, f"{row.event_id}.raw"))
        if i % 50 == 0:
            _log(f"spectrogram: {i}/{len(manifest)}")
    return {"images": len(manifest)}


def check_augment(cfg):
    from .augment import AugmentationSpec

    manifest, inputs = _check_manifest(cfg)
    spec = AugmentationSpec(include_combinations=not cfg["no_combinations"], seed=cfg["seed"])
    return inputs, (manifest, spec)


def run_augment(cfg, state, out):
    from .augment import augment_manifest

    manifest, spec = state
    result, count = augment_manifest(manifest, spec, out)
    result.save(os.path.join(out, "manifest.csv"))
    return {"manifest": os.path.join(out, "manifest.csv"), "augmented_rows": count,
            "originals": len(result.originals())}


def check_features(cfg):
    manifest, inputs = _check_manifest(cfg)
    return inputs, manifest


def run_features(cfg, manifest, out):
    import csv

    from .data import load_event
    from .model import event_features

    names = ([f"mfcc_mean_{i}" for i in range(13)] + [f"mfcc_std_{i}" for i in range(13)]
             + [f"lpcc_mean_{i}" for i in range(12)] + [f"lpcc_std_{i}" for i in range(12)])
    path = os.path.join(out, "features.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "subject_id", "label"] + names)
        for row in manifest.rows:
            feats = event_features(load_event(manifest, row))
            w.writerow([row.event_id, row.subject_id, row.label] + [repr(float(v)) for v in feats])
    return {"features": path, "events": len(manifest), "dimensions": len(names)}


def _pipeline_config(cfg):
    from .evaluation import PipelineConfig
    from .model import BaselineConfig, NcnnConfig, TrainConfig

    try:
        return PipelineConfig(
            pipeline=cfg["pipeline"], ncnn=NcnnConfig(seed=cfg["seed"]),
            train=TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"],
                              epochs=cfg["epochs"], seed=cfg["seed"],
                              deterministic=cfg["deterministic"]),
            baseline=BaselineConfig(), augment=cfg["augment"], threads=cfg["threads"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def check_train(cfg):
    manifest, inputs = _check_manifest(cfg)
    if len({r.label for r in manifest.rows}) < 2:
        raise UsageError(f"{cfg['manifest']}: training needs both classes")
    return inputs, (manifest, _pipeline_config(cfg))


def run_train(cfg, state, out):
    from .evaluation import save_model, train_pipeline
    from .model import save_history_csv

    manifest, config = state
    model, history = train_pipeline(manifest, config)
    name = "model.ncnn" if config.pipeline == "ncnn" else "model.json"
    save_model(model, os.path.join(out, name))
    if config.pipeline == "ncnn":
        save_history_csv(history, os.path.join(out, "history.csv"))
    else:
        with open(os.path.join(out, "history.csv"), "w") as fh:
            fh.write("epoch,objective\n")
            fh.writelines(f"{h['epoch']},{h['objective']!r}\n" for h in history)
    return {"model": os.path.join(out, name), "epochs": len(history)}


def check_evaluate(cfg):
    from .evaluation import kfold_subject, loso_folds

    manifest, inputs = _check_manifest(cfg)
    config = _pipeline_config(cfg)
    if cfg["protocol"] == "loso":
        plan = loso_folds(manifest)
    else:
        plan = kfold_subject(manifest, 10, seed=cfg["seed"])
    return inputs, (manifest, plan, config)


def run_evaluate(cfg, state, out):
    from .evaluation import run_cross_validation

    manifest, plan, config = state

    def progress(fold, result):
        acc = "skipped" if result is None else f"accuracy {result.accuracy:.3f}"
        _log(f"fold {fold.index + 1}/{len(plan.folds)} {','.join(fold.test_subjects)}: {acc}")

    report = run_cross_validation(manifest, plan, config, out_dir=out, progress=progress)
    _log(report.table())
    return {"report": os.path.join(out, "report.json"), "pooled": report.pooled,
            "folds": len(report.folds), "skipped": len(report.skipped)}


def check_infer(cfg):
    _need(cfg, "model")
    if not os.path.isfile(cfg["model"]):
        raise UsageError(f"model not found: {cfg['model']}")
    if bool(cfg["manifest"]) == bool(cfg["wav"]):
        raise UsageError("give exactly one of --manifest or --wav")
    if cfg["wav"]:
        if not os.path.isfile(cfg["wav"]):
            raise UsageError(f"WAV not found: {cfg['wav']}")
        return [cfg["model"], cfg["wav"]], None
    manifest, inputs = _check_manifest(cfg)
    return [cfg["model"]] + inputs, manifest


def run_infer(cfg, manifest, out):
    import csv

    from .data import DatasetManifest, ManifestRow
    from .evaluation import load_model, score_events

    model = load_model(cfg["model"])
    if manifest is None:
        # a one-row manifest; the label is a placeholder that is never read
        wav = os.path.abspath(cfg["wav"])
        event = os.path.splitext(os.path.basename(wav))[0]
        manifest = DatasetManifest([ManifestRow(event, "unknown", wav, "pain")])
    ids = [r.event_id for r in manifest.originals()]
    scores = score_events(model, manifest, ids)
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "score", "prediction"])
        for i, s in zip(ids, scores):
            w.writerow([i, repr(float(s)), "pain" if s > 0.5 else "no_pain"])
    return {"predictions": path, "events": len(ids)}


# -- entry point ------------------------------------------------------------

def _pin_blas_threads() -> None:
    # only effective when numpy has not been imported yet, which is the case
    # for the console script because heavy imports are deferred
    if "numpy" not in sys.modules:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"


def main(argv=None) -> int:
    from .errors import NeocryError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    command = args.command
    given = {k: v for k, v in vars(args).items() if k != "command"}
    this = sys.modules[__name__]
    try:
        cfg = resolve(command, given)
        if cfg["deterministic"]:
            _pin_blas_threads()
        inputs, state = getattr(this, f"check_{command}")(cfg)
    except (UsageError, NeocryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_provenance(out, command, cfg, inputs, "running")
    start = time.perf_counter()
    try:
        summary = getattr(this, f"run_{command}")(cfg, state, out)
    except Exception as exc:  # anything past validation is a runtime failure
        _write_provenance(out, command, cfg, inputs, "failed", {"error": str(exc)})
        print(f"error: {command} failed: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - start
    _write_provenance(out, command, cfg, inputs, "ok", {"wall_clock_s": elapsed})
    print(json.dumps({"command": command, **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
