import itertools
import json

import numpy as np
import pytest

from neocry.data import DatasetManifest, ManifestRow, SynthConfig, synthetic_events
from neocry.errors import FoldError
from neocry.evaluation import (PipelineConfig, accuracy, auc, check_leakage, confusion,
                               kfold_subject, loso_folds, run_cross_validation, split_events)
from neocry.model import NcnnConfig, TrainConfig, build_ncnn


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def random_manifest(rng, n_subjects=None):
    n_subjects = n_subjects or int(rng.integers(2, 40))
    rows = []
    for s in range(n_subjects):
        for e in range(int(rng.integers(1, 5))):
            eid = f"s{s}_e{e}"
            label = ("pain", "no_pain")[int(rng.integers(2))]
            rows.append(ManifestRow(eid, f"s{s}", f"{eid}.wav", label))
            for v in range(int(rng.integers(0, 3))):
                rows.append(ManifestRow(f"{eid}__v{v}", f"s{s}", f"{eid}__v{v}.wav", label,
                                        provenance="augmented", parent_id=eid, transform=f"v{v}"))
    return DatasetManifest(rows)


def _root(manifest, event_id):
    row = manifest[event_id]
    while row.provenance == "augmented":
        row = manifest[row.parent_id]
    return row


def test_loso_31_subjects():
    m = random_manifest(np.random.default_rng(0), n_subjects=31)
    plan = loso_folds(m)
    assert len(plan.folds) == 31
    assert all(len(f.test_subjects) == 1 and len(f.train_subjects) == 30 for f in plan.folds)


def test_loso_two_subjects():
    m = random_manifest(np.random.default_rng(1), n_subjects=2)
    plan = loso_folds(m)
    assert [(f.train_subjects, f.test_subjects) for f in plan.folds] == [(("s1",), ("s0",)),
                                                                         (("s0",), ("s1",))]


def test_single_subject_rejected():
    m = DatasetManifest([ManifestRow("a", "s", "a.wav", "pain")])
    with pytest.raises(FoldError):
        loso_folds(m)


def test_kfold_sizes_and_errors():
    m = random_manifest(np.random.default_rng(2), n_subjects=31)
    plan = kfold_subject(m, 10, seed=3)
    assert sorted((len(f.test_subjects) for f in plan.folds), reverse=True) == [4] + [3] * 9
    assert kfold_subject(m, 10, seed=3) == plan
    assert kfold_subject(m, 10, seed=4) != plan
    with pytest.raises(FoldError, match="leave-one-subject-out"):
        kfold_subject(random_manifest(np.random.default_rng(2), n_subjects=5), 10)


def test_kfold_with_k_equal_subjects_is_loso():
    m = random_manifest(np.random.default_rng(5), n_subjects=7)
    a = {f.test_subjects for f in kfold_subject(m, 7, seed=9).folds}
    b = {f.test_subjects for f in loso_folds(m).folds}
    assert a == b


def test_fold_properties_over_random_manifests():
    rng = np.random.default_rng(42)
    for _ in range(100):
        m = random_manifest(rng)
        subjects = set(m.subjects())
        plans = [loso_folds(m)]
        if len(subjects) >= 3:
            plans.append(kfold_subject(m, int(rng.integers(2, min(len(subjects), 10) + 1)),
                                       seed=int(rng.integers(1000))))
        for plan in plans:
            plan.check(subjects)
            tested = [s for f in plan.folds for s in f.test_subjects]
            assert sorted(tested) == sorted(subjects)
            for fold in plan.folds:
                assert not set(fold.train_subjects) & set(fold.test_subjects)
                train_ids, test_ids = split_events(m, fold)
                assert not set(train_ids) & set(test_ids)
                test_roots = {_root(m, i).event_id for i in test_ids}
                for i in train_ids:
                    root = _root(m, i)
                    assert root.event_id not in test_roots
                    assert root.subject_id not in fold.test_subjects
                assert all(m[i].provenance == "original" for i in test_ids)


def test_leakage_guard_catches_planted_row():
    m = random_manifest(np.random.default_rng(7), n_subjects=4)
    fold = loso_folds(m).folds[0]
    train_ids, test_ids = split_events(m, fold)
    with pytest.raises(FoldError, match="descends"):
        check_leakage(m, train_ids + [test_ids[0]], test_ids)


def test_accuracy_examples():
    assert accuracy([0.9, 0.2, 0.7], [1, 0, 0]) == pytest.approx(2 / 3)
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    with pytest.raises(ValueError):
        accuracy([0.1], [1, 0])
    rng = np.random.default_rng(0)
    accs = [accuracy(rng.uniform(size=1), rng.integers(0, 2, size=1)) for _ in range(100_000)]
    assert abs(np.mean(accs) - 0.5) <= 0.01


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(ValueError, match="one class"):
        auc([0.3, 0.4], [1, 1])


def test_auc_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 501))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = np.round(rng.uniform(size=n), int(rng.integers(1, 4)))  # forces ties
        assert abs(auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12


def test_auc_rank_invariant():
    rng = np.random.default_rng(2)
    s = rng.normal(size=200)
    y = rng.integers(0, 2, size=200)
    assert auc(s, y) == auc(np.exp(3 * s) + 1, y)


def test_confusion_counts():
    c = confusion([0.9, 0.2, 0.7, 0.4], [1, 0, 0, 1])
    assert c == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}


def _synthetic(n_subjects, events):
    ev = list(synthetic_events(SynthConfig(n_subjects=n_subjects, events_per_subject=events)))
    sigs = {r.event_id: s for r, s in ev}
    return DatasetManifest([r for r, _ in ev]), (lambda m, r: sigs[r.event_id])


def test_baseline_cross_validation(tmp_path):
    m, loader = _synthetic(6, 4)
    plan = kfold_subject(m, 3, seed=0)
    cfg = PipelineConfig(pipeline="baseline", augment=False)
    r1 = run_cross_validation(m, plan, cfg, out_dir=tmp_path / "a", loader=loader)
    r2 = run_cross_validation(m, plan, cfg, out_dir=tmp_path / "b", loader=loader)
    assert len(r1.folds) == 3
    assert r1.to_json() == r2.to_json()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert sorted(p.name for p in (tmp_path / "a" / "models").iterdir()) == [
        "fold_000.json", "fold_001.json", "fold_002.json"]
    pooled = r1.pooled["confusion"]
    for key in pooled:
        assert pooled[key] == sum(f.confusion[key] for f in r1.folds)
    assert sum(pooled.values()) == r1.pooled["n"] == 24
    table = (tmp_path / "a" / "report.txt").read_text()
    assert "Approach" in table and "AUC" in table and "Accuracy (%)" in table
    assert "wall_clock_s" in json.loads((tmp_path / "a" / "timing.json").read_text())


def test_baseline_with_augmentation_uses_training_side_only():
    m, loader = _synthetic(3, 2)
    plan = loso_folds(m)
    cfg = PipelineConfig(pipeline="baseline")
    report = run_cross_validation(m, plan, cfg, loader=loader)
    assert all(f.n_train == 4 * 28 for f in report.folds)
    assert [f.test_balance for f in report.folds] == [{"no_pain": 1, "pain": 1}] * 3


def test_single_class_fold_is_skipped():
    # subject "a" only has pain events, so the fold testing "b" trains on a
    # single class and must be skipped with a warning
    labels = {"a1": "pain", "a2": "pain", "b1": "pain", "b2": "no_pain", "b3": "pain",
              "b4": "no_pain"}
    rows = [ManifestRow(e, e[0], f"{e}.wav", lab) for e, lab in labels.items()]
    m = DatasetManifest(rows)
    signals = [s for _, s in synthetic_events(SynthConfig(n_subjects=2, events_per_subject=3))]
    by_id = dict(zip(labels, signals))
    cfg = PipelineConfig(pipeline="baseline", augment=False)
    with pytest.warns(UserWarning, match="fold 1 skipped"):
        report = run_cross_validation(m, loso_folds(m), cfg, loader=lambda mm, r: by_id[r.event_id])
    assert [f.index for f in report.folds] == [0]
    assert report.skipped == [{"fold": 1, "reason": "single-class training data",
                               "test_subjects": ["b"]}]
    assert report.folds[0].auc is None


def test_augment_training_only_enforced():
    m, loader = _synthetic(2, 2)
    cfg = PipelineConfig(pipeline="baseline", train=TrainConfig(augment_training_only=False))
    with pytest.raises(ValueError, match="training side"):
        run_cross_validation(m, loso_folds(m), cfg, loader=loader)


@pytest.mark.slow
def test_ncnn_cross_validation_threads_agree(tmp_path):
    m, loader = _synthetic(3, 2)
    plan = loso_folds(m)
    base = dict(pipeline="ncnn", augment=False, train=TrainConfig(epochs=1, batch_size=4))
    r1 = run_cross_validation(m, plan, PipelineConfig(**base), out_dir=tmp_path / "a", loader=loader)
    r2 = run_cross_validation(m, plan, PipelineConfig(threads=2, **base), out_dir=tmp_path / "b",
                              loader=loader)
    assert r1.param_count == build_ncnn(NcnnConfig()).param_count
    assert len(r1.folds) == 3
    b1, b2 = r1.body(), r2.body()
    b1.pop("config_hash"), b2.pop("config_hash")
    assert b1 == b2
    for i in range(3):
        name = f"fold_{i:03d}.ncnn"
        assert (tmp_path / "a" / "models" / name).read_bytes() == \
            (tmp_path / "b" / "models" / name).read_bytes()
