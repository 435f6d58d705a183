import numpy as np
import pytest

from neocry.audio_io import AudioSignal, normalize_peak, read_wav
from neocry.augment import (AugmentationSpec, add_noise, augment_manifest, expand,
                            scale_frequency, variant_rng)
from neocry.data import DatasetManifest, ManifestRow

from conftest import dominant_frequency, sine


def test_variant_order_and_tags():
    tags = [t for t, _, _ in AugmentationSpec().variants()]
    assert len(tags) == 27 and len(set(tags)) == 27
    assert tags[:3] == ["f1-2", "f1-3", "f2-3"]
    assert tags[3:9] == ["n0.01", "n0.05", "n0.001", "n0.005", "n0.003", "n0.03"]
    assert tags[9] == "f1-2+n0.01" and tags[15] == "f1-3+n0.01" and tags[-1] == "f2-3+n0.03"
    assert len(AugmentationSpec(include_combinations=False).variants()) == 9


def test_spec_validation():
    with pytest.raises(ValueError, match="3 frequency factors"):
        AugmentationSpec(freq_factors=(0.5, 0.25))
    with pytest.raises(ValueError):
        AugmentationSpec(noise_levels=(0.01, 0.05, 0.001, 0.005, 0.003, -0.03))


def test_expand_yields_27_distinct():
    s = sine(440.0, n=4000, source_id="ev1")
    out = expand(s)
    assert len(out) == 27
    assert len({v.source_id for v in out}) == 27
    assert all(v.source_id.startswith("ev1__") for v in out)


def test_frequency_only_variants_are_noise_free():
    s = sine(440.0, n=4000, amp=0.4, source_id="ev")
    out = expand(s)
    for v, f in zip(out[:3], (1 / 2, 1 / 3, 2 / 3)):
        assert v.samples.tobytes() == scale_frequency(s, f).samples.tobytes()


def test_combination_is_composition():
    s = sine(440.0, n=4000, amp=0.4, source_id="ev")
    spec = AugmentationSpec(seed=5)
    out = expand(s, spec)
    index = 9  # (1/2, 0.01)
    ref = add_noise(scale_frequency(s, 1 / 2), 0.01, variant_rng(5, "ev", index))
    assert out[index].samples.tobytes() == ref.samples.tobytes()
    # noise-only variants are applied to the peak-normalized parent
    ref = add_noise(normalize_peak(s), 0.05, variant_rng(5, "ev", 4))
    assert out[4].samples.tobytes() == ref.samples.tobytes()


def test_expand_deterministic_and_seed_only_touches_noise():
    s = sine(300.0, n=3000, amp=0.7, source_id="x")
    a, b = expand(s, AugmentationSpec(seed=1)), expand(s, AugmentationSpec(seed=1))
    assert all(u.samples.tobytes() == v.samples.tobytes() for u, v in zip(a, b))
    c = expand(s, AugmentationSpec(seed=2))
    for (tag, factor, level), u, v in zip(AugmentationSpec().variants(), a, c):
        same = u.samples.tobytes() == v.samples.tobytes()
        assert same == (level is None), tag


def test_scale_frequency_oracles():
    s = sine(600.0)
    assert scale_frequency(s, 1.0).samples.tobytes() == normalize_peak(s).samples.tobytes()
    for factor, target in ((1 / 2, 300.0), (2 / 3, 400.0), (1 / 3, 200.0)):
        out = scale_frequency(s, factor)
        f, bin_hz = dominant_frequency(out)
        assert abs(f - target) <= bin_hz
        assert len(out) == round(8000 / factor)
        assert np.max(np.abs(out.samples)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        scale_frequency(s, 4.5)


def test_noise_std_on_silence():
    out = add_noise(AudioSignal(np.zeros(100_000), 8000), 0.01, np.random.default_rng(0))
    assert abs(out.samples.std() - 0.01) <= 0.001
    again = add_noise(AudioSignal(np.zeros(100_000), 8000), 0.01, np.random.default_rng(0))
    assert out.samples.tobytes() == again.samples.tobytes()


def test_noise_snr():
    s = sine(440.0, n=100_000, amp=0.8)
    out = add_noise(s, 0.05, np.random.default_rng(1))
    rms = np.sqrt(np.mean(s.samples ** 2))
    snr = 10 * np.log10(np.mean(s.samples ** 2) / np.mean((out.samples - s.samples) ** 2))
    assert abs(snr - 20 * np.log10(rms / 0.05)) <= 1.0


def _manifest(n_events, tmp_path=None):
    rows = [ManifestRow(f"e{i:03d}", f"s{i % 31:02d}", f"e{i:03d}.wav",
                        "pain" if i % 2 else "no_pain") for i in range(n_events)]
    return DatasetManifest(rows, base_dir=str(tmp_path or "."))


def test_augment_manifest_182_events(tmp_path):
    sigs = {}
    m = _manifest(182)
    for i, row in enumerate(m.rows):
        sigs[row.event_id] = AudioSignal(np.sin(np.arange(400) * (0.05 + i * 1e-3)) * 0.5, 8000,
                                         row.event_id)
    out, count = augment_manifest(m, AugmentationSpec(), tmp_path / "aug",
                                  loader=lambda mm, r: sigs[r.event_id])
    assert count == 4914
    assert len(out.augmented()) == 4914 and len(out.originals()) == 182
    assert len(list((tmp_path / "aug").glob("*.wav"))) == 4914
    for row in out.augmented()[:60]:
        parent = out[row.parent_id]
        assert (row.label, row.subject_id) == (parent.label, parent.subject_id)
        assert row.transform and out.root_of(row.event_id) == parent.event_id
    first = out.augmented()[0]
    back = read_wav(out.resolve(first))
    assert len(back) == len(expand(sigs[first.parent_id])[0])
