import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import welch

from tanet.dataio import (DatasetManifest, SynthConfig, boosted_channels, entry_for, generate_synthetic,
                          load_dataset, read_manifest, read_trial, synthesize, write_manifest, write_trial)
from tanet.errors import ConfigError, FormatError, LengthError, ManifestError, VersionError
from tanet.preprocess import EegRecording, Label


def same(a: EegRecording, b: EegRecording) -> bool:
    return (a.data.tobytes() == b.data.tobytes() and a.fs == b.fs and a.label == b.label
            and a.trial_id == b.trial_id and a.subject_id == b.subject_id)


@pytest.fixture
def trial(tmp_path):
    r = EegRecording(np.random.default_rng(0).normal(size=(3, 17)), 256.0, Label.RIGHT, trial_id=4, subject_id=2)
    path = tmp_path / "t.eegt"
    write_trial(path, r)
    return path, r


def test_trial_round_trip(trial):
    path, r = trial
    assert same(read_trial(path), r)


def test_trial_layout_is_little_endian_channel_major(trial):
    path, r = trial
    raw = path.read_bytes()
    magic, version, ch, n, fs, label, subj, tr = struct.unpack_from("<4sIIQdBII", raw)
    assert (magic, version, ch, n, fs, label, subj, tr) == (b"EEGT", 1, 3, 17, 256.0, 1, 2, 4)
    first = struct.unpack_from("<d", raw, 37)[0]
    assert first == r.data[0, 0]
    assert struct.unpack_from("<d", raw, 37 + 8 * 17)[0] == r.data[1, 0]


def test_trial_truncated(trial):
    path, _ = trial
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(LengthError):
        read_trial(path)


def test_trial_bad_magic_and_version(trial):
    path, _ = trial
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as info:
        read_trial(path)
    assert not isinstance(info.value, (LengthError, VersionError))
    path.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(VersionError):
        read_trial(path)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 20), st.sampled_from([1e-3, 1.0, 128.0, 8192.0, 1e9]),
       st.sampled_from(list(Label)), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_round_trip_property(channels, samples, fs, label, subj, tr):
    import tempfile
    from pathlib import Path
    r = EegRecording(np.random.default_rng(tr).normal(size=(channels, samples)) * 1e300 ** (tr % 2),
                     fs, label, trial_id=tr, subject_id=subj)
    with tempfile.TemporaryDirectory() as d:
        write_trial(Path(d) / "x.eegt", r)
        assert same(read_trial(Path(d) / "x.eegt"), r)


# ------------------------------------------------------------------ manifest


def test_manifest_empty_and_singleton(tmp_path, trial):
    path, r = trial
    write_manifest(tmp_path / "empty.txt", DatasetManifest([], tmp_path))
    assert load_dataset(read_manifest(tmp_path / "empty.txt")) == []
    write_manifest(tmp_path / "one.txt", DatasetManifest([entry_for("t.eegt", r)], tmp_path))
    assert (tmp_path / "one.txt").read_text().splitlines() == ["eegt-manifest v1", "t.eegt 2 4 right 256.0 3 17"]
    loaded = load_dataset(read_manifest(tmp_path / "one.txt"))
    assert len(loaded) == 1 and same(loaded[0], r)


def test_manifest_sample_mismatch_names_file(tmp_path, trial):
    _, r = trial
    (tmp_path / "bad.txt").write_text("eegt-manifest v1\nt.eegt 2 4 right 256.0 3 18\n")
    with pytest.raises(ManifestError, match=r"t\.eegt.*samples"):
        load_dataset(read_manifest(tmp_path / "bad.txt"))


def test_manifest_missing_file_and_duplicates(tmp_path, trial):
    (tmp_path / "m.txt").write_text("eegt-manifest v1\nnope.eegt 0 0 left 128.0 1 1\n")
    with pytest.raises(ManifestError, match="missing"):
        load_dataset(read_manifest(tmp_path / "m.txt"))
    (tmp_path / "d.txt").write_text("eegt-manifest v1\na 0 0 left 1.0 1 1\nb 0 0 right 1.0 1 1\n")
    with pytest.raises(ManifestError, match="duplicate"):
        read_manifest(tmp_path / "d.txt")
    (tmp_path / "h.txt").write_text("manifest\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "h.txt")


# ----------------------------------------------------------------- synthetic


def test_synthetic_is_byte_deterministic(tmp_path):
    cfg = SynthConfig(subjects=2, trials_per_subject=3, trial_seconds=2.0, channels=4, seed=7)
    generate_synthetic(cfg, tmp_path / "a")
    generate_synthetic(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert load_dataset(read_manifest(tmp_path / "a" / "manifest.txt"))[0].channels == 4


@pytest.mark.parametrize("trials", [1, 4, 7])
def test_synthetic_labels_balanced(trials):
    recs = synthesize(SynthConfig(subjects=3, trials_per_subject=trials, trial_seconds=0.5, channels=4))
    for s in range(3):
        labels = [r.label for r in recs if r.subject_id == s]
        assert abs(labels.count(Label.LEFT) - labels.count(Label.RIGHT)) <= 1


def test_synthetic_invalid_config():
    with pytest.raises(ConfigError):
        SynthConfig(subjects=0)
    with pytest.raises(ConfigError):
        SynthConfig(fs=0.0)


def test_boosted_halves():
    assert list(boosted_channels(Label.LEFT, 64)) == list(range(32, 64))
    assert list(boosted_channels(Label.RIGHT, 64)) == list(range(32))


def alpha_power(data, fs):
    f, pxx = welch(data, fs=fs, nperseg=int(2 * fs), axis=-1)
    return pxx[:, np.argmin(np.abs(f - 10.0))]


def half_contrast(r: EegRecording) -> float:
    """10 Hz power of the boosted half minus the other half (mean over channels)."""
    p = alpha_power(r.data, r.fs)
    on = boosted_channels(r.label, r.channels)
    off = np.setdiff1d(np.arange(r.channels), on)
    return float(p[on].mean() - p[off].mean())


def test_boosted_half_has_more_alpha_power_at_6db():
    recs = synthesize(SynthConfig(subjects=4, trials_per_subject=10, trial_seconds=10.0, snr_db=6.0, seed=3))
    wins = sum(half_contrast(r) > 0 for r in recs)
    assert wins >= 0.95 * len(recs)


def test_separability_grows_with_snr():
    stats = []
    for snr in (0.0, 6.0, 12.0):
        recs = synthesize(SynthConfig(subjects=2, trials_per_subject=4, trial_seconds=10.0, snr_db=snr, seed=4))
        stats.append(np.mean([half_contrast(r) for r in recs]))
    assert stats[0] < stats[1] < stats[2]
