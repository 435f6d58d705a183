"""Dataset manifest and a synthetic cry-like dataset generator.

The manifest is a CSV with the header::

    event_id,subject_id,wav_path,label,nips_score,provenance,parent_id,transform

``wav_path`` may be relative, in which case it is resolved against the
directory holding the manifest.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import AudioSignal, read_wav, write_wav
from .errors import ManifestError

HEADER = ("event_id", "subject_id", "wav_path", "label", "nips_score",
          "provenance", "parent_id", "transform")
LABELS = ("no_pain", "pain")
NIPS_MAX = 7


@dataclass(frozen=True)
class ManifestRow:
    event_id: str
    subject_id: str
    wav_path: str
    label: str
    nips_score: int | None = None
    provenance: str = "original"
    parent_id: str = ""
    transform: str = ""

    @property
    def y(self) -> int:
        return LABELS.index(self.label)

    @property
    def is_original(self) -> bool:
        return self.provenance == "original"

    def with_path(self, wav_path: str) -> "ManifestRow":
        return replace(self, wav_path=wav_path)

    def as_csv(self) -> list[str]:
        return [self.event_id, self.subject_id, self.wav_path, self.label,
                "" if self.nips_score is None else str(self.nips_score),
                self.provenance, self.parent_id, self.transform]


def _check_row(row: ManifestRow, where: str) -> None:
    if not row.event_id:
        raise ManifestError(f"{where}: field 'event_id' is empty")
    if not row.subject_id:
        raise ManifestError(f"{where}: field 'subject_id' is empty")
    if not row.wav_path:
        raise ManifestError(f"{where}: field 'wav_path' is empty")
    if row.label not in LABELS:
        raise ManifestError(f"{where}: field 'label' must be one of {LABELS}, got {row.label!r}")
    if row.nips_score is not None and not 0 <= row.nips_score <= NIPS_MAX:
        raise ManifestError(f"{where}: field 'nips_score' out of range 0-{NIPS_MAX}")
    if row.provenance not in ("original", "augmented"):
        raise ManifestError(f"{where}: field 'provenance' must be original or augmented")
    if row.provenance == "augmented" and not row.parent_id:
        raise ManifestError(f"{where}: field 'parent_id' required for augmented rows")


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple
    base_dir: str = "."
    lines: tuple = field(default=None, repr=False, compare=False)  # source line of each row
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        index = {}
        lines = tuple(self.lines) if self.lines is not None else range(1, len(rows) + 1)
        for i, row in zip(lines, rows):
            _check_row(row, f"row {i}")
            if row.event_id in index:
                raise ManifestError(f"row {i}: duplicate event_id {row.event_id!r}")
            index[row.event_id] = row
        for i, row in zip(lines, rows):
            if row.provenance == "augmented":
                parent = index.get(row.parent_id)
                if parent is None:
                    raise ManifestError(f"row {i}: parent_id {row.parent_id!r} not in manifest")
                if parent.label != row.label or parent.subject_id != row.subject_id:
                    raise ManifestError(f"row {i}: augmented row changes label or subject "
                                        f"of parent {row.parent_id!r}")
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, event_id: str) -> ManifestRow:
        return self._index[event_id]

    def __contains__(self, event_id) -> bool:
        return event_id in self._index

    def originals(self) -> list[ManifestRow]:
        return [r for r in self.rows if r.is_original]

    def augmented(self) -> list[ManifestRow]:
        return [r for r in self.rows if not r.is_original]

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.rows})

    def root_of(self, event_id: str) -> str:
        """Follow parent links back to the original event."""
        row = self._index[event_id]
        seen = set()
        while not row.is_original:
            if row.event_id in seen:
                raise ManifestError(f"provenance cycle at {row.event_id!r}")
            seen.add(row.event_id)
            row = self._index[row.parent_id]
        return row.event_id

    def resolve(self, row: ManifestRow) -> str:
        if os.path.isabs(row.wav_path):
            return row.wav_path
        return os.path.join(self.base_dir, row.wav_path)

    def class_balance(self, originals_only: bool = True) -> dict:
        rows = self.originals() if originals_only else self.rows
        return {lab: sum(r.label == lab for r in rows) for lab in LABELS}

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for row in self.rows:
                w.writerow(row.as_csv())


def load_manifest(path) -> DatasetManifest:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header row") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise ManifestError(f"{path}: row 1: header must be {','.join(HEADER)}")
        rows, lines = [], []
        for fields in reader:
            lineno = reader.line_num
            if not fields:
                continue
            if len(fields) != len(HEADER):
                raise ManifestError(f"{path}: row {lineno}: expected {len(HEADER)} fields, "
                                    f"got {len(fields)}")
            rec = dict(zip(HEADER, (f.strip() for f in fields)))
            score = rec["nips_score"]
            try:
                score = int(score) if score else None
            except ValueError:
                raise ManifestError(f"{path}: row {lineno}: field 'nips_score' "
                                    f"is not an integer: {score!r}") from None
            rows.append(ManifestRow(rec["event_id"], rec["subject_id"], rec["wav_path"],
                                    rec["label"], score, rec["provenance"] or "original",
                                    rec["parent_id"], rec["transform"]))
            lines.append(lineno)
    try:
        return DatasetManifest(rows, base_dir=os.path.dirname(os.path.abspath(path)),
                               lines=tuple(lines))
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def load_event(manifest: DatasetManifest, row: ManifestRow) -> AudioSignal:
    return read_wav(manifest.resolve(row), source_id=row.event_id)


def label_from_nips(score: int, threshold: int = 3) -> str:
    """Binarize a NIPS score: above ``threshold`` is pain."""
    if not 0 <= score <= NIPS_MAX:
        raise ValueError(f"NIPS score must be in 0..{NIPS_MAX}, got {score}")
    return "pain" if score > threshold else "no_pain"


CONTRASTS = ("contour", "timbre")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic cry generator.

    Two class contrasts are available:

    ``contour``
        Both classes share harmonic content, amplitude bursts and noise.
        Pain events glide upward in pitch and no-pain events glide downward
        by the same ratio, around centre pitches whose ranges overlap only
        partly. The classes differ mostly in time-frequency layout.
    ``timbre``
        Pain is a bright 12-harmonic cry with amplitude-modulated bursts;
        no-pain is a quiet low hum over broadband noise (see
        :meth:`timbre`). The classes differ in pitch, brightness and level.
    """
    n_subjects: int = 31
    events_per_subject: int = 6
    sample_rate: int = 8000
    duration_s: float = 1.0
    contrast: str = "contour"
    pain_f0: tuple = (380.0, 620.0)
    calm_f0: tuple = (220.0, 400.0)
    glide: float = 3.0          # end/start pitch ratio of the contour
    burst_hz: tuple = (2.0, 5.0)
    n_harmonics: int = 8
    noise_level: float = 0.003
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("need at least 2 subjects")
        if self.events_per_subject < 1:
            raise ValueError("need at least one event per subject")
        if self.contrast not in CONTRASTS:
            raise ValueError(f"contrast must be one of {CONTRASTS}, got {self.contrast!r}")
        if self.glide < 1.0:
            raise ValueError("glide is a pitch ratio and must be >= 1")
        for name in ("pain_f0", "calm_f0", "burst_hz"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be an increasing positive range")

    @classmethod
    def timbre(cls, **overrides) -> "SynthConfig":
        """Cry vs hum profile: pain 400-600 Hz with 4-8 Hz bursts, no-pain
        150-300 Hz at low level plus broadband noise."""
        base = dict(contrast="timbre", pain_f0=(400.0, 600.0), calm_f0=(150.0, 300.0),
                    burst_hz=(4.0, 8.0), n_harmonics=12, noise_level=0.02)
        base.update(overrides)
        return cls(**base)


def _subject_traits(rng: np.random.Generator) -> dict:
    # formant centres and a spectral tilt standing in for vocal tract and
    # microphone/room colouring; these are what make subjects differ
    return {
        "f0_scale": rng.uniform(0.9, 1.1),
        "formants": (rng.uniform(700, 1300), rng.uniform(1700, 2700)),
        "tilt": rng.uniform(-1.0, 0.5),
        "noise": rng.uniform(0.5, 1.5),
    }


def _harmonic_tone(t, f0_track, n_harm, rolloff, traits, nyquist, rng):
    """Harmonic stack following the instantaneous pitch ``f0_track``."""
    sr = 1.0 / (t[1] - t[0]) if t.size > 1 else 1.0
    inst_phase = 2 * np.pi * np.cumsum(f0_track) / sr
    x = np.zeros_like(t)
    f1, f2 = traits["formants"]
    for h in range(1, n_harm + 1):
        fh = h * f0_track
        env = (1.0 + 2.0 * np.exp(-((fh - f1) / 250.0) ** 2) + np.exp(-((fh - f2) / 350.0) ** 2))
        gain = env * (fh / 1000.0) ** traits["tilt"] / h ** rolloff
        gain = np.where(fh < 0.95 * nyquist, gain, 0.0)
        x += gain * np.sin(h * inst_phase + rng.uniform(0, 2 * np.pi))
    return x


def _vibrato(t, f0, rate, depth, rng):
    return f0 * (1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))


def _colored_noise(n, traits, rng):
    w = rng.normal(size=n)
    spec = np.fft.rfft(w)
    f = np.linspace(1e-3, 1.0, spec.size)
    spec *= f ** (traits["tilt"] / 2.0)
    y = np.fft.irfft(spec, n=n)
    return y / (np.std(y) + 1e-12)


def _bursts(t, rate_range, rng):
    rate = rng.uniform(*rate_range)
    return 0.5 * (1.0 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))


def _contour_event(label, traits, config, t, rng):
    f_range = config.pain_f0 if label == "pain" else config.calm_f0
    centre = rng.uniform(*f_range) * traits["f0_scale"]
    # geometric glide centred on ``centre``: mirrored contours share the
    # same log-pitch mean
    u = t / config.duration_s - 0.5
    sign = 1.0 if label == "pain" else -1.0
    track = centre * config.glide ** (sign * u)
    x = _harmonic_tone(t, track, config.n_harmonics, 1.0, traits, config.sample_rate / 2.0, rng)
    x = x / (np.max(np.abs(x)) + 1e-12) * (0.3 + 0.7 * _bursts(t, config.burst_hz, rng))
    return x + config.noise_level * traits["noise"] * _colored_noise(t.size, traits, rng)


def _timbre_event(label, traits, config, t, rng):
    nyq = config.sample_rate / 2.0
    if label == "pain":
        f0 = rng.uniform(*config.pain_f0) * traits["f0_scale"]
        track = _vibrato(t, f0, rng.uniform(4, 7), 0.03, rng)
        x = _harmonic_tone(t, track, config.n_harmonics, 0.5, traits, nyq, rng)
        x = x / (np.max(np.abs(x)) + 1e-12) * (0.15 + 0.85 * _bursts(t, config.burst_hz, rng) ** 2)
        return x + config.noise_level * traits["noise"] * _colored_noise(t.size, traits, rng)
    f0 = rng.uniform(*config.calm_f0) * traits["f0_scale"]
    x = _harmonic_tone(t, _vibrato(t, f0, 1.0, 0.01, rng), 4, 2.0, traits, nyq, rng)
    x = 0.25 * x / (np.max(np.abs(x)) + 1e-12)
    return x + 1.5 * config.noise_level * traits["noise"] * _colored_noise(t.size, traits, rng)


def synthesize_event(label: str, traits: dict, config: SynthConfig,
                     rng: np.random.Generator, source_id: str = "") -> AudioSignal:
    """One cry-like event of class ``label`` for a subject with ``traits``."""
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    n = int(round(config.duration_s * config.sample_rate))
    t = np.arange(n) / config.sample_rate
    make = _contour_event if config.contrast == "contour" else _timbre_event
    x = make(label, traits, config, t, rng)
    gain = rng.uniform(0.3, 0.9)
    x = gain * x / (np.max(np.abs(x)) + 1e-12)
    return AudioSignal(np.clip(x, -1.0, 1.0), config.sample_rate, source_id)


def synthetic_events(config: SynthConfig):
    """Yield (ManifestRow without path, AudioSignal) for every synthetic event."""
    counter = 0
    for s in range(config.n_subjects):
        subject = f"S{s + 1:03d}"
        traits = _subject_traits(np.random.default_rng([config.seed, s, 0]))
        for e in range(config.events_per_subject):
            # alternate the starting class per subject so odd counts still balance
            label = LABELS[(e + counter) % 2]
            event_id = f"{subject}_E{e + 1:02d}"
            rng = np.random.default_rng([config.seed, s, e + 1])
            sig = synthesize_event(label, traits, config, rng, event_id)
            nips = int(rng.integers(4, 8)) if label == "pain" else int(rng.integers(0, 3))
            yield ManifestRow(event_id, subject, f"{event_id}.wav", label, nips), sig
        counter += config.events_per_subject


def generate_synthetic(config: SynthConfig, out_dir) -> DatasetManifest:
    """Write one WAV per event plus ``manifest.csv`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for row, sig in synthetic_events(config):
        write_wav(os.path.join(out_dir, row.wav_path), sig)
        rows.append(row)
    manifest = DatasetManifest(rows, base_dir=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, "manifest.csv"))
    return manifest
