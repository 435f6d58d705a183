import numpy as np
import pytest

from neocry.data import (HEADER, DatasetManifest, ManifestRow, SynthConfig, generate_synthetic,
                         label_from_nips, load_event, load_manifest, synthetic_events)
from neocry.dsp import stft_magnitude
from neocry.errors import ManifestError


def _write(path, lines):
    path.write_text("\n".join([",".join(HEADER)] + lines) + "\n")
    return path


def test_two_row_manifest(tmp_path):
    p = _write(tmp_path / "m.csv", ["a,s1,a.wav,pain,5,original,,", "b,s2,b.wav,no_pain,,original,,"])
    m = load_manifest(p)
    assert len(m) == 2 and m.subjects() == ["s1", "s2"]
    assert m["a"].nips_score == 5 and m["b"].nips_score is None
    assert m.resolve(m["a"]) == str(tmp_path / "a.wav")


def test_round_trip_is_identity(tmp_path):
    rows = [ManifestRow("a", "s1", "a.wav", "pain", 6),
            ManifestRow("a__n0.01", "s1", "/abs/a__n0.01.wav", "pain", 6, "augmented", "a", "n0.01"),
            ManifestRow("b", "s2", "b.wav", "no_pain")]
    m = DatasetManifest(rows, base_dir=str(tmp_path))
    m.save(tmp_path / "m.csv")
    back = load_manifest(tmp_path / "m.csv")
    assert back.rows == m.rows
    back.save(tmp_path / "m2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()


@pytest.mark.parametrize("lines, pattern", [
    (["a,s1,a.wav,pain,,original,,", "a,s2,b.wav,pain,,original,,"], "duplicate event_id 'a'"),
    (["a,s1,a.wav,hungry,,original,,"], "row 2: field 'label'"),
    (["a,s1,a.wav,pain,9,original,,"], "row 2: field 'nips_score'"),
    (["a,s1,a.wav,pain,x,original,,"], "row 2: field 'nips_score'"),
    (["a,,a.wav,pain,,original,,"], "row 2: field 'subject_id'"),
    (["a,s1,a.wav,pain,,original,"], "row 2: expected 8 fields"),
    (["a,s1,a.wav,pain,,augmented,zz,n0.01"], "parent_id 'zz'"),
    (["a,s1,a.wav,pain,,original,,", "b,s2,b.wav,pain,,augmented,a,n0.01"], "changes label or subject"),
])
def test_manifest_errors(tmp_path, lines, pattern):
    with pytest.raises(ManifestError, match=pattern):
        load_manifest(_write(tmp_path / "m.csv", lines))


def test_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,subject\n")
    with pytest.raises(ManifestError, match="header"):
        load_manifest(p)


def test_label_from_nips():
    assert label_from_nips(0) == "no_pain"
    assert label_from_nips(3) == "no_pain"
    assert label_from_nips(4) == "pain"
    assert label_from_nips(7) == "pain"
    assert label_from_nips(4, threshold=4) == "no_pain"
    with pytest.raises(ValueError):
        label_from_nips(8)


def test_generate_synthetic_files(tmp_path):
    cfg = SynthConfig(n_subjects=3, events_per_subject=3, duration_s=0.5)
    m1 = generate_synthetic(cfg, tmp_path / "a")
    m2 = generate_synthetic(cfg, tmp_path / "b")
    assert len(m1) == 9 and m1.subjects() == ["S001", "S002", "S003"]
    for row in m1.rows:
        assert (tmp_path / "a" / row.wav_path).read_bytes() == (tmp_path / "b" / row.wav_path).read_bytes()
    loaded = load_manifest(tmp_path / "a" / "manifest.csv")
    assert [r.event_id for r in loaded.rows] == [r.event_id for r in m1.rows]
    assert len(load_event(loaded, loaded.rows[0])) == 4000
    bal = loaded.class_balance()
    assert abs(bal["pain"] - bal["no_pain"]) <= 1


def test_default_scale_and_balance():
    rows = [r for r, _ in synthetic_events(SynthConfig())]
    assert len(rows) == 186 and len({r.subject_id for r in rows}) == 31
    assert sum(r.label == "pain" for r in rows) == 93
    for r in rows:
        assert label_from_nips(r.nips_score) == r.label


def test_seed_changes_data():
    a = next(synthetic_events(SynthConfig(seed=0)))[1]
    b = next(synthetic_events(SynthConfig(seed=1)))[1]
    assert a.samples.tobytes() != b.samples.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_subjects=1)
    with pytest.raises(ValueError):
        SynthConfig(contrast="loud")
    with pytest.raises(ValueError):
        SynthConfig(glide=0.5)


def _centroid(power):
    f = np.arange(power.shape[1])
    return float((power.sum(axis=0) * f).sum() / power.sum())


def test_timbre_profile_centroid_separates():
    for seed in (0, 1):
        ev = list(synthetic_events(SynthConfig.timbre(seed=seed)))
        c = {lab: np.array([_centroid(stft_magnitude(s) ** 2) for r, s in ev if r.label == lab])
             for lab in ("pain", "no_pain")}
        assert np.mean(c["pain"][:, None] > c["no_pain"][None, :]) >= 0.95


def test_contour_profile_drift_separates():
    # pain rises and no-pain falls: the spectral centroid of the second half
    # minus that of the first half carries the label
    for seed in (0, 1):
        hits = []
        for row, sig in synthetic_events(SynthConfig(seed=seed)):
            p = stft_magnitude(sig) ** 2
            h = p.shape[0] // 2
            hits.append((_centroid(p[h:]) - _centroid(p[:h]) > 0) == (row.label == "pain"))
        assert np.mean(hits) >= 0.95


def test_subjects_differ_more_than_events():
    # long-term spectral slope per event: spread between subjects exceeds
    # the spread within a subject
    by_subject = {}
    for row, sig in synthetic_events(SynthConfig()):
        p = np.log(np.mean(stft_magnitude(sig) ** 2, axis=0) + 1e-12)
        slope = np.polyfit(np.arange(p.size), p, 1)[0]
        by_subject.setdefault(row.subject_id, []).append(slope)
    groups = [np.array(v) for v in by_subject.values()]
    within = np.mean([g.var() for g in groups])
    between = np.var([g.mean() for g in groups])
    assert between > within
