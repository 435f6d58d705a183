"""Frequency-scaling and noise augmentation of audio events.

Each event expands into 27 variants: three frequency factors, six noise
levels, and every (factor, level) pair with the frequency change applied
first.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .audio_io import AudioSignal, normalize_peak, resample_linear, write_wav

FREQ_FACTORS = (1 / 2, 1 / 3, 2 / 3)
NOISE_LEVELS = (0.01, 0.05, 0.001, 0.005, 0.003, 0.03)


@dataclass(frozen=True)
class AugmentationSpec:
    freq_factors: tuple = FREQ_FACTORS
    noise_levels: tuple = NOISE_LEVELS
    include_combinations: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.freq_factors) != 3 or len(self.noise_levels) != 6:
            raise ValueError("expected 3 frequency factors and 6 noise levels, got "
                             f"{len(self.freq_factors)} and {len(self.noise_levels)}")
        if any(f <= 0 for f in self.freq_factors) or any(v <= 0 for v in self.noise_levels):
            raise ValueError("frequency factors and noise levels must be positive")

    def variants(self) -> list[tuple[str, float | None, float | None]]:
        """(tag, factor, level) for every variant, in expansion order."""
        out = [(_factor_tag(f), f, None) for f in self.freq_factors]
        out += [(_level_tag(v), None, v) for v in self.noise_levels]
        if self.include_combinations:
            out += [(f"{_factor_tag(f)}+{_level_tag(v)}", f, v)
                    for f in self.freq_factors for v in self.noise_levels]
        return out


def _factor_tag(f: float) -> str:
    q = Fraction(f).limit_denominator(64)
    return f"f{q.numerator}-{q.denominator}"


def _level_tag(v: float) -> str:
    return f"n{v:g}"


def variant_id(parent_id: str, tag: str) -> str:
    return f"{parent_id}__{tag}"


def scale_frequency(signal: AudioSignal, factor: float) -> AudioSignal:
    """Map every spectral component f to f * factor, then peak-normalize."""
    if not 0 < factor <= 4:
        raise ValueError(f"frequency factor must be in (0, 4], got {factor}")
    return normalize_peak(resample_linear(signal, factor))


def add_noise(signal: AudioSignal, level: float, rng: np.random.Generator) -> AudioSignal:
    """Add zero-mean Gaussian noise with standard deviation ``level``."""
    noise = rng.normal(0.0, level, size=signal.samples.size)
    return signal.with_samples(np.clip(signal.samples + noise, -1.0, 1.0))


def variant_rng(seed: int, parent_id: str, index: int) -> np.random.Generator:
    """Independent stream per (seed, event, variant) so expansion order and
    parallelism cannot change the noise any variant receives."""
    h = int.from_bytes(hashlib.sha256(parent_id.encode()).digest()[:8], "little")
    return np.random.default_rng([int(seed), h, int(index)])


def expand(signal: AudioSignal, spec: AugmentationSpec = AugmentationSpec()) -> list[AudioSignal]:
    """The 27 variants of ``signal`` in ``spec.variants()`` order. Noise is
    always added to a peak-normalized signal, so levels are relative to
    full scale."""
    scaled = {f: scale_frequency(signal, f) for f in spec.freq_factors}
    plain = normalize_peak(signal)
    out = []
    for index, (tag, factor, level) in enumerate(spec.variants()):
        base = plain if factor is None else scaled[factor]
        if level is not None:
            base = add_noise(base, level, variant_rng(spec.seed, signal.source_id, index))
        out.append(base.with_samples(base.samples, variant_id(signal.source_id, tag)))
    return out


def augment_manifest(manifest, spec: AugmentationSpec, out_dir, loader=None):
    """Write augmented WAVs for every original event of ``manifest`` into
    ``out_dir``; return a manifest of the originals plus the new rows."""
    from .data import DatasetManifest, ManifestRow, load_event

    loader = loader or load_event
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    new_rows = []
    for row in manifest.originals():
        rows.append(row.with_path(os.path.abspath(manifest.resolve(row))))
        sig = loader(manifest, row)
        for (tag, _, _), var in zip(spec.variants(), expand(sig, spec)):
            fname = f"{var.source_id}.wav"
            write_wav(os.path.join(out_dir, fname), var)
            new_rows.append(ManifestRow(
                event_id=var.source_id, subject_id=row.subject_id, wav_path=fname,
                label=row.label, nips_score=row.nips_score, provenance="augmented",
                parent_id=row.event_id, transform=tag))
    return DatasetManifest(rows + new_rows, base_dir=out_dir), len(new_rows)
