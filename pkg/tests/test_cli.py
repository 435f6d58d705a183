import csv
import json
import os

import pytest

from neocry.cli import COMMANDS, COMMON, build_parser, git_blob_hash, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree(root):
    return {os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs}


@pytest.fixture
def dataset(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--subjects", 3, "--events", 2, "--duration", 0.5,
                     "--seed", 1, "--out", tmp_path / "data")
    assert code == 0
    return tmp_path / "data" / "manifest.csv"


def test_synth_writes_manifest_and_provenance(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--subjects", 2, "--events", 3, "--out", tmp_path / "d")
    assert code == 0
    assert json.loads(out)["events"] == 6
    prov = json.loads((tmp_path / "d" / "provenance.json").read_text())
    assert prov["status"] == "ok" and prov["seed"] == 0 and prov["config"]["subjects"] == 2
    with open(tmp_path / "d" / "manifest.csv") as fh:
        assert len(list(csv.reader(fh))) == 7


def test_git_blob_hash(tmp_path):
    # `git hash-object` of the bytes "hello\n"
    (tmp_path / "f").write_bytes(b"hello\n")
    assert git_blob_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_augment_182_events(tmp_path, capsys):
    assert run(capsys, "synth", "--subjects", 91, "--events", 2, "--duration", 0.25,
               "--out", tmp_path / "d")[0] == 0
    code, out, _ = run(capsys, "augment", "--manifest", tmp_path / "d" / "manifest.csv",
                       "--out", tmp_path / "aug")
    assert code == 0
    summary = json.loads(out)
    assert summary["augmented_rows"] == 4914 and summary["originals"] == 182
    with open(tmp_path / "aug" / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["provenance"] == "augmented" for r in rows) == 4914


def test_missing_manifest_exits_1_without_output(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", "--manifest", tmp_path / "nope.csv",
                       "--out", tmp_path / "out")
    assert code == 1 and "manifest not found" in err
    assert not (tmp_path / "out").exists()


def test_unknown_flag_prints_usage(capsys):
    code, _, err = run(capsys, "synth", "--bogus", "1")
    assert code == 1 and "usage:" in err and "--bogus" in err
    assert run(capsys)[0] == 1


def test_deterministic_requires_seed(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--deterministic", "--out", tmp_path / "d")
    assert code == 1 and "--seed" in err
    assert not (tmp_path / "d").exists()


def test_runtime_failure_exits_2(tmp_path, capsys, dataset):
    first = next(p for p in sorted(dataset.parent.glob("*.wav")))
    first.write_bytes(b"RIFF garbage")
    code, _, err = run(capsys, "features", "--manifest", dataset, "--out", tmp_path / "f")
    assert code == 2 and "failed" in err
    prov = json.loads((tmp_path / "f" / "provenance.json").read_text())
    assert prov["status"] == "failed" and prov["error"]


def test_config_file_precedence(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nseed = 9\n[synth]\nsubjects = 4\nevents = 2\n")
    code, out, _ = run(capsys, "synth", "--config", ini, "--subjects", 3, "--out", tmp_path / "d")
    assert code == 0
    prov = json.loads((tmp_path / "d" / "provenance.json").read_text())
    cfg = prov["config"]
    assert (cfg["subjects"], cfg["events"], cfg["seed"]) == (3, 2, 9)
    assert prov["config_file_text"] == ini.read_text()
    assert json.loads(out)["events"] == 6


def test_config_file_errors(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[synth]\nvolume = 11\n")
    assert run(capsys, "synth", "--config", ini, "--out", tmp_path / "d")[0] == 1
    ini.write_text("[synth]\ncontrast = loud\n")
    assert run(capsys, "synth", "--config", ini, "--out", tmp_path / "d")[0] == 1
    ini.write_text("[common]\ndeterministic = no\n")
    assert run(capsys, "synth", "--config", ini, "--subjects", 2, "--events", 2,
               "--out", tmp_path / "d")[0] == 0
    assert run(capsys, "synth", "--config", tmp_path / "missing.ini", "--out", tmp_path / "e")[0] == 1


def test_threads_env_default(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NEOCRY_THREADS", "3")
    assert run(capsys, "synth", "--subjects", 2, "--events", 2, "--out", tmp_path / "d")[0] == 0
    cfg = json.loads((tmp_path / "d" / "provenance.json").read_text())["config"]
    assert cfg["threads"] == 3
    monkeypatch.setenv("NEOCRY_THREADS", "many")
    assert run(capsys, "synth", "--out", tmp_path / "e")[0] == 1


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name in COMMANDS:
        with pytest.raises(SystemExit):
            parser.parse_args([name, "--help"])
        text = capsys.readouterr().out
        for flag, *_ in COMMON + COMMANDS[name][1]:
            assert flag in text, (name, flag)
        for action in sub.choices[name]._actions:
            assert action.help, (name, action.option_strings)
    assert main(["evaluate", "--help"]) == 0


def test_pipeline_stays_inside_out(tmp_path, capsys, dataset, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = tree(tmp_path)
    manifest = os.path.relpath(dataset, tmp_path)
    steps = [
        ("spectrogram", "--manifest", manifest, "--format", "both", "--out", "spec"),
        ("features", "--manifest", manifest, "--out", "feat"),
        ("train", "--manifest", manifest, "--pipeline", "baseline", "--out", "model"),
        ("infer", "--model", "model/model.json", "--manifest", manifest, "--out", "pred"),
        ("infer", "--model", "model/model.json",
         "--wav", os.path.join("data", "S001_E01.wav"), "--out", "one"),
    ]
    for argv in steps:
        assert run(capsys, *argv)[0] == 0, argv
    new = tree(tmp_path) - before
    outs = ("spec", "feat", "model", "pred", "one")
    assert all(p.split(os.sep)[0] in outs for p in new), sorted(new)
    assert len(list((tmp_path / "spec").glob("*.png"))) == 6
    with open(tmp_path / "feat" / "features.csv") as fh:
        header = next(csv.reader(fh))
    assert len(header) == 3 + 50
    with open(tmp_path / "pred" / "predictions.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 6


def test_evaluate_ncnn_smoke(tmp_path, capsys, dataset):
    code, out, err = run(capsys, "evaluate", "--manifest", dataset, "--protocol", "loso",
                         "--pipeline", "ncnn", "--seed", 7, "--epochs", 1, "--batch-size", 4,
                         "--deterministic", "--out", tmp_path / "ev")
    assert code == 0
    assert json.loads(out)["folds"] == 3
    assert "fold 3/3" in err and "Accuracy (%)" in err
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["protocol"] == "loso" and report["param_count"] == 50161
    assert "Spectrogram + N-CNN" in (tmp_path / "ev" / "report.txt").read_text()
    assert len(list((tmp_path / "ev" / "models").glob("*.ncnn"))) == 3


def test_train_and_infer_ncnn(tmp_path, capsys, dataset):
    assert run(capsys, "train", "--manifest", dataset, "--epochs", 1, "--batch-size", 3,
               "--out", tmp_path / "m")[0] == 0
    with open(tmp_path / "m" / "history.csv") as fh:
        history = list(csv.DictReader(fh))
    assert [h["epoch"] for h in history] == ["1"] and float(history[0]["loss"]) > 0
    assert run(capsys, "infer", "--model", tmp_path / "m" / "model.ncnn", "--manifest", dataset,
               "--out", tmp_path / "p")[0] == 0
    with open(tmp_path / "p" / "predictions.csv") as fh:
        scores = [float(r["score"]) for r in csv.DictReader(fh)]
    assert len(scores) == 6 and all(0 < s < 1 for s in scores)


def test_infer_needs_exactly_one_source(tmp_path, capsys, dataset):
    model = tmp_path / "m.json"
    model.write_text("{}")
    assert run(capsys, "infer", "--model", model, "--out", tmp_path / "o")[0] == 1
    assert run(capsys, "infer", "--model", model, "--manifest", dataset,
               "--wav", dataset, "--out", tmp_path / "o")[0] == 1
    assert not (tmp_path / "o").exists()
