"""Subject-aware cross-validation and the accuracy / AUC metrics."""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .augment import AugmentationSpec, expand
from .data import DatasetManifest, load_event
from .dsp import SpectrogramConfig, render_spectrogram
from .errors import FoldError
from .model import (BaselineConfig, LinearModel, NcnnConfig, TrainConfig, as_batch,
                    build_ncnn, event_features, predict, train, train_baseline)
from .nnet import ModelGraph


@dataclass(frozen=True)
class Fold:
    index: int
    train_subjects: tuple
    test_subjects: tuple


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    protocol: str           # "loso" or "kfold"
    k: int
    seed: int | None = None

    def check(self, subjects) -> None:
        """Raise unless folds are disjoint and test each subject exactly once."""
        subjects = set(subjects)
        tested = []
        for f in self.folds:
            if set(f.train_subjects) & set(f.test_subjects):
                raise FoldError(f"fold {f.index} trains and tests on the same subject")
            if set(f.train_subjects) | set(f.test_subjects) != subjects:
                raise FoldError(f"fold {f.index} does not cover every subject")
            tested.extend(f.test_subjects)
        if sorted(tested) != sorted(subjects):
            raise FoldError("subjects are not each tested exactly once")


def loso_folds(manifest: DatasetManifest) -> FoldPlan:
    subjects = manifest.subjects()
    if len(subjects) < 2:
        raise FoldError(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    folds = tuple(Fold(i, tuple(s for s in subjects if s != test), (test,))
                  for i, test in enumerate(subjects))
    return FoldPlan(folds, "loso", len(subjects))


def kfold_subject(manifest: DatasetManifest, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle subjects with ``seed`` and deal them round-robin into ``k`` folds."""
    subjects = manifest.subjects()
    if k < 2:
        raise FoldError(f"k must be at least 2, got {k}")
    if len(subjects) < k:
        raise FoldError(f"{len(subjects)} subjects cannot fill {k} folds; "
                        "use leave-one-subject-out instead")
    order = np.random.default_rng(seed).permutation(len(subjects))
    buckets = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        buckets[pos % k].append(subjects[idx])
    folds = []
    for i, test in enumerate(buckets):
        test_set = set(test)
        folds.append(Fold(i, tuple(s for s in subjects if s not in test_set), tuple(sorted(test))))
    return FoldPlan(tuple(folds), "kfold", k, seed)


def split_events(manifest: DatasetManifest, fold: Fold) -> tuple[list[str], list[str]]:
    """(training event ids, test event ids) for one fold.

    Training takes originals and augmented rows of training subjects. Testing
    uses the test subjects' originals only; their augmented descendants are
    held out of both sides.
    """
    test_subjects = set(fold.test_subjects)
    train_subjects = set(fold.train_subjects)
    train_ids = [r.event_id for r in manifest.rows if r.subject_id in train_subjects]
    test_ids = [r.event_id for r in manifest.originals() if r.subject_id in test_subjects]
    check_leakage(manifest, train_ids, test_ids)
    return train_ids, test_ids


def check_leakage(manifest: DatasetManifest, train_ids, test_ids) -> None:
    test_roots = {manifest.root_of(i) for i in test_ids}
    test_subjects = {manifest[i].subject_id for i in test_ids}
    for i in train_ids:
        root = manifest.root_of(i)
        if root in test_roots or manifest[root].subject_id in test_subjects:
            raise FoldError(f"training event {i!r} descends from test-side event {root!r}")


# -- metrics ---------------------------------------------------------------

def _check_pair(predictions, labels):
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.size != y.size:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    if p.size == 0:
        raise ValueError("no predictions")
    return p, y


def accuracy(predictions, labels, threshold: float = 0.5) -> float:
    p, y = _check_pair(predictions, labels)
    return float(np.mean((p > threshold) == (y == 1)))


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative, ties
    counting one half (rank-sum form)."""
    s, y = _check_pair(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = rankdata(s, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion(predictions, labels, threshold: float = 0.5) -> dict:
    p, y = _check_pair(predictions, labels)
    hit = p > threshold
    pos = y == 1
    return {"tp": int(np.sum(hit & pos)), "fp": int(np.sum(hit & ~pos)),
            "tn": int(np.sum(~hit & ~pos)), "fn": int(np.sum(~hit & pos))}


# -- cross-validation runner ----------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    pipeline: str = "ncnn"              # "ncnn" or "baseline"
    spectrogram: SpectrogramConfig = SpectrogramConfig()
    ncnn: NcnnConfig = NcnnConfig()
    train: TrainConfig = TrainConfig()
    baseline: BaselineConfig = BaselineConfig()
    augmentation: AugmentationSpec = AugmentationSpec()
    augment: bool = True                # expand training originals in memory
    include_originals: bool = True      # keep un-augmented originals in training
    threads: int = 1

    def __post_init__(self):
        if self.pipeline not in ("ncnn", "baseline"):
            raise ValueError(f"pipeline must be 'ncnn' or 'baseline', got {self.pipeline!r}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FoldResult:
    index: int
    test_subjects: list
    event_ids: list
    labels: list
    scores: list
    accuracy: float
    auc: float | None
    confusion: dict
    train_balance: dict
    test_balance: dict
    n_train: int


@dataclass
class MetricsReport:
    protocol: str
    pipeline: str
    config_hash: str
    param_count: int | None
    folds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    pooled: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def body(self) -> dict:
        """Everything except timing; identical across reruns with equal seeds."""
        return {"protocol": self.protocol, "pipeline": self.pipeline,
                "config_hash": self.config_hash, "param_count": self.param_count,
                "folds": [asdict(f) for f in self.folds], "skipped": self.skipped,
                "pooled": self.pooled}

    def to_json(self) -> str:
        return json.dumps(self.body(), sort_keys=True, indent=1)

    def table(self, approach: str | None = None) -> str:
        name = approach or ("Spectrogram + N-CNN" if self.pipeline == "ncnn"
                            else "LPCC/MFCC + linear SVM")
        params = "-" if self.param_count is None else str(self.param_count)
        acc = 100.0 * self.pooled.get("accuracy", float("nan"))
        a = self.pooled.get("auc")
        rows = [("Approach", "Total parameters", "Accuracy (%)", "AUC"),
                (name, params, f"{acc:.2f}", "-" if a is None else f"{a:.2f}")]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return f"{self.protocol.upper()} ({len(self.folds)} folds evaluated)\n" + "\n".join(lines)

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(self.table() + "\n")
        with open(os.path.join(out_dir, "timing.json"), "w") as fh:
            json.dump({"wall_clock_s": self.wall_clock_s}, fh)


class _Representations:
    """Per-event inputs (spectrogram image or feature vector), computed once
    and shared by every fold."""

    def __init__(self, manifest, config: PipelineConfig, loader):
        self.manifest = manifest
        self.config = config
        self.loader = loader
        self._cache = {}
        self._variants = {}
        # originals whose variants already sit in the manifest are not
        # expanded a second time
        self._on_disk = {r.parent_id for r in manifest.augmented()}

    def expands(self, row) -> bool:
        return self.config.augment and row.is_original and row.event_id not in self._on_disk

    def _represent(self, signal):
        if self.config.pipeline == "ncnn":
            return render_spectrogram(signal, self.config.spectrogram).pixels
        return event_features(signal)

    def get(self, event_id):
        if event_id not in self._cache:
            sig = self.loader(self.manifest, self.manifest[event_id])
            self._cache[event_id] = self._represent(sig)
        return self._cache[event_id]

    def variants(self, event_id):
        """Representations of the in-memory augmentations of an original."""
        if event_id not in self._variants:
            sig = self.loader(self.manifest, self.manifest[event_id])
            self._variants[event_id] = [self._represent(v)
                                        for v in expand(sig, self.config.augmentation)]
        return self._variants[event_id]

    def training_set(self, train_ids):
        xs, ys = [], []
        for i in train_ids:
            row = self.manifest[i]
            if not row.is_original or self.config.include_originals:
                xs.append(self.get(i))
                ys.append(row.y)
            if self.expands(row):
                vs = self.variants(i)
                xs.extend(vs)
                ys.extend([row.y] * len(vs))
        return xs, np.array(ys)


def _balance(labels) -> dict:
    labels = np.asarray(labels)
    return {"no_pain": int(np.sum(labels == 0)), "pain": int(np.sum(labels == 1))}


def _fit(xs, y, config: PipelineConfig):
    """Train the configured pipeline on representations ``xs``."""
    if config.pipeline == "ncnn":
        model = build_ncnn(config.ncnn)
        _, history = train(model, as_batch(xs, config.ncnn.input_shape[-1]), y, config.train)
        return model, history
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lin = train_baseline(np.stack(xs), y, config.baseline)
    return lin, [{"epoch": i + 1, "objective": v} for i, v in enumerate(lin.objective)]


def _score(model, xs) -> np.ndarray:
    if isinstance(model, LinearModel):
        return model.predict_proba(np.stack(xs))
    return predict(model, as_batch(xs, model.input_node.layer.shape[-1]))


def save_model(model, path) -> None:
    """N-CNN graphs go to the binary container, baselines to JSON."""
    if isinstance(model, LinearModel):
        with open(path, "w") as fh:
            fh.write(model.to_json())
    else:
        model.save(path)


def load_model(path):
    with open(path, "rb") as fh:
        head = fh.read(1)
    if head == b"{":
        with open(path) as fh:
            return LinearModel.from_json(fh.read())
    return ModelGraph.load(path)[0]


def train_pipeline(manifest: DatasetManifest, config: PipelineConfig = PipelineConfig(),
                   train_ids=None, loader=load_event):
    """Fit one model on ``train_ids`` (default: every row) and return it with
    its training history."""
    if not config.train.augment_training_only:
        raise ValueError("augment_training_only=False is not supported")
    reps = _Representations(manifest, config, loader)
    ids = list(train_ids) if train_ids is not None else [r.event_id for r in manifest.rows]
    xs, y = reps.training_set(ids)
    if np.unique(y).size < 2:
        raise ValueError("training set holds a single class")
    return _fit(xs, y, config)


def score_events(model, manifest: DatasetManifest, event_ids=None, config=None,
                 loader=load_event) -> np.ndarray:
    """Pain probabilities for ``event_ids`` (default: every original row)."""
    if config is None:
        pipeline = "baseline" if isinstance(model, LinearModel) else "ncnn"
        config = PipelineConfig(pipeline=pipeline, augment=False)
    reps = _Representations(manifest, config, loader)
    ids = event_ids if event_ids is not None else [r.event_id for r in manifest.originals()]
    return _score(model, [reps.get(i) for i in ids])


def _run_fold(fold, manifest, config, reps, out_dir):
    train_ids, test_ids = split_events(manifest, fold)
    xs, y_train = reps.training_set(train_ids)
    y_test = np.array([manifest[i].y for i in test_ids])
    if np.unique(y_train).size < 2:
        return None, {"fold": fold.index, "reason": "single-class training data",
                      "test_subjects": list(fold.test_subjects)}
    model, _ = _fit(xs, y_train, config)
    scores = _score(model, [reps.get(i) for i in test_ids])
    if out_dir:
        ext = "ncnn" if config.pipeline == "ncnn" else "json"
        save_model(model, os.path.join(out_dir, f"fold_{fold.index:03d}.{ext}"))
    fold_auc = auc(scores, y_test) if np.unique(y_test).size == 2 else None
    return FoldResult(
        index=fold.index, test_subjects=list(fold.test_subjects), event_ids=list(test_ids),
        labels=y_test.tolist(), scores=[float(s) for s in scores],
        accuracy=accuracy(scores, y_test), auc=fold_auc, confusion=confusion(scores, y_test),
        train_balance=_balance(y_train), test_balance=_balance(y_test),
        n_train=int(y_train.size)), None


def run_cross_validation(manifest: DatasetManifest, plan: FoldPlan,
                         config: PipelineConfig = PipelineConfig(), out_dir=None,
                         loader=load_event, progress=None) -> MetricsReport:
    """Train a fresh model per fold and evaluate it on the held-out subjects.

    Pooled metrics are computed over the concatenation of every fold's test
    predictions; per-fold metrics are kept alongside.
    """
    start = time.perf_counter()
    if not config.train.augment_training_only:
        raise ValueError("augmentation is only ever applied to the training side; "
                         "augment_training_only=False is not supported")
    plan.check(manifest.subjects())
    trained = {s for f in plan.folds for s in f.train_subjects}
    model_dir = os.path.join(out_dir, "models") if out_dir else None
    if model_dir:
        os.makedirs(model_dir, exist_ok=True)
    reps = _Representations(manifest, config, loader)
    # fill the cache up front so worker threads only read it
    for r in manifest.rows:
        reps.get(r.event_id)
        if reps.expands(r) and r.subject_id in trained:
            reps.variants(r.event_id)

    def job(fold):
        out = _run_fold(fold, manifest, config, reps, model_dir)
        if progress is not None:
            progress(fold, out[0])
        return out

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(job, plan.folds))
    else:
        outcomes = [job(f) for f in plan.folds]

    param_count = build_ncnn(config.ncnn).param_count if config.pipeline == "ncnn" else None
    report = MetricsReport(plan.protocol, config.pipeline, config.digest(), param_count)
    for result, skip in outcomes:
        if skip is not None:
            warnings.warn(f"fold {skip['fold']} skipped: {skip['reason']}")
            report.skipped.append(skip)
        else:
            report.folds.append(result)
    scores = np.concatenate([r.scores for r in report.folds]) if report.folds else np.zeros(0)
    labels = np.concatenate([r.labels for r in report.folds]) if report.folds else np.zeros(0)
    if scores.size:
        report.pooled = {
            "n": int(scores.size), "accuracy": accuracy(scores, labels),
            "auc": auc(scores, labels) if np.unique(labels).size == 2 else None,
            "confusion": confusion(scores, labels),
            "mean_fold_accuracy": float(np.mean([r.accuracy for r in report.folds])),
        }
    report.wall_clock_s = time.perf_counter() - start
    if out_dir:
        report.save(out_dir)
    return report
