"""Trial files, dataset manifests and the synthetic EEG generator.

Trial file (all little-endian)::

    "EEGT" | u32 version | u32 channels | u64 samples | f64 fs | u8 label
           | u32 subject_id | u32 trial_id | channels*samples f64, channel-major

Manifest: a text file whose first line is ``eegt-manifest v1`` followed by one
``path subject_id trial_id label fs channels samples`` line per trial.  Paths
are relative to the manifest's directory.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, LengthError, ManifestError, VersionError
from .preprocess import EegRecording, Label

TRIAL_MAGIC = b"EEGT"
TRIAL_VERSION = 1
MANIFEST_HEADER = "eegt-manifest v1"
_TRIAL_HEADER = struct.Struct("<4sIIQdBII")


def encode_trial(rec: EegRecording) -> bytes:
    header = _TRIAL_HEADER.pack(TRIAL_MAGIC, TRIAL_VERSION, rec.channels, rec.samples, float(rec.fs),
                                int(rec.label), rec.subject_id, rec.trial_id)
    return header + np.ascontiguousarray(rec.data, dtype="<f8").tobytes()


def write_trial(path, rec: EegRecording) -> None:
    Path(path).write_bytes(encode_trial(rec))


def read_trial_header(raw: bytes, name="trial") -> tuple:
    if len(raw) < 4 or raw[:4] != TRIAL_MAGIC:
        raise FormatError(f"{name}: bad magic {raw[:4]!r}, expected {TRIAL_MAGIC!r}")
    if len(raw) < _TRIAL_HEADER.size:
        raise LengthError(f"{name}: truncated header ({len(raw)} bytes)")
    _, version, channels, samples, fs, label, subject, trial = _TRIAL_HEADER.unpack_from(raw)
    if version != TRIAL_VERSION:
        raise VersionError(f"{name}: trial format version {version}, expected {TRIAL_VERSION}")
    return channels, samples, fs, label, subject, trial


def read_trial(path) -> EegRecording:
    raw = Path(path).read_bytes()
    channels, samples, fs, label, subject, trial = read_trial_header(raw, str(path))
    expected = _TRIAL_HEADER.size + 8 * channels * samples
    if len(raw) != expected:
        raise LengthError(f"{path}: {len(raw)} bytes but header implies {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=_TRIAL_HEADER.size).reshape(channels, samples)
    return EegRecording(data.astype(np.float64), fs, Label(label), trial, subject)


# ------------------------------------------------------------------ manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: int
    trial_id: int
    label: Label
    fs: float
    channels: int
    samples: int

    def line(self) -> str:
        return (f"{self.path} {self.subject_id} {self.trial_id} {self.label.name.lower()} "
                f"{self.fs!r} {self.channels} {self.samples}")


@dataclass
class DatasetManifest:
    entries: list
    root: Path = Path(".")
    version: int = 1

    def __len__(self):
        return len(self.entries)

    def subjects(self) -> list[int]:
        return sorted({e.subject_id for e in self.entries})


def entry_for(path: str, rec: EegRecording) -> ManifestEntry:
    return ManifestEntry(path, rec.subject_id, rec.trial_id, rec.label, float(rec.fs),
                         rec.channels, rec.samples)


def write_manifest(path, manifest: DatasetManifest) -> None:
    keys = [(e.subject_id, e.trial_id) for e in manifest.entries]
    if len(set(keys)) != len(keys):
        raise ManifestError("duplicate (subject_id, trial_id) in manifest")
    lines = [MANIFEST_HEADER] + [e.line() for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest {path} not found") from exc
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: first line must be {MANIFEST_HEADER!r}")
    entries, seen = [], set()
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ManifestError(f"{path}:{no}: expected 7 fields, got {len(parts)}")
        try:
            e = ManifestEntry(parts[0], int(parts[1]), int(parts[2]), Label.parse(parts[3]),
                              float(parts[4]), int(parts[5]), int(parts[6]))
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{path}:{no}: {exc}") from exc
        if (e.subject_id, e.trial_id) in seen:
            raise ManifestError(f"{path}:{no}: duplicate subject {e.subject_id} trial {e.trial_id}")
        seen.add((e.subject_id, e.trial_id))
        entries.append(e)
    return DatasetManifest(entries, path.parent)


def load_dataset(manifest: DatasetManifest) -> list[EegRecording]:
    out = []
    for e in manifest.entries:
        f = manifest.root / e.path
        if not f.exists():
            raise ManifestError(f"{f}: listed in manifest but missing")
        rec = read_trial(f)
        got = (rec.subject_id, rec.trial_id, rec.label, rec.fs, rec.channels, rec.samples)
        want = (e.subject_id, e.trial_id, e.label, e.fs, e.channels, e.samples)
        if got != want:
            names = ("subject_id", "trial_id", "label", "fs", "channels", "samples")
            diff = ", ".join(f"{n}: file {g} vs manifest {w}" for n, g, w in zip(names, got, want) if g != w)
            raise ManifestError(f"{f}: header disagrees with manifest ({diff})")
        out.append(rec)
    return out


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 4
    trials_per_subject: int = 8
    trial_seconds: float = 30.0
    channels: int = 64
    fs: float = 128.0
    snr_db: float = 12.0
    seed: int = 0
    motif_hz: float = 10.0
    phase_spread: float = np.pi  # half-width of the per-channel phase offsets

    def __post_init__(self):
        if min(self.subjects, self.trials_per_subject, self.channels) < 1:
            raise ConfigError("subjects, trials and channels must all be >= 1")
        if not self.fs > 0 or not self.trial_seconds > 0:
            raise ConfigError("fs and trial_seconds must be positive")
        if self.channels < 2:
            raise ConfigError("lateralized data needs at least 2 channels")

    @property
    def amplitude(self) -> float:
        """Sinusoid amplitude whose power (A^2/2) is ``snr_db`` above the unit noise variance."""
        return float(np.sqrt(2.0 * 10.0 ** (self.snr_db / 10.0)))


def boosted_channels(label: Label, channels: int) -> np.ndarray:
    """Channels carrying the motif: upper half for attend-left, lower half for attend-right."""
    half = channels // 2
    return np.arange(half, channels) if label == Label.LEFT else np.arange(half)


def synthesize(cfg: SynthConfig) -> list[EegRecording]:
    """All trials in (subject, trial) order, as a pure function of ``cfg``.

    Each trial is unit-variance white noise plus a ``motif_hz`` sinusoid on the
    boosted half of the montage.  Per-channel phase offsets are fixed per subject
    (a stable topography); each trial adds its own random onset phase.
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.trial_seconds * cfg.fs))
    t = np.arange(n) / cfg.fs
    out = []
    for s in range(cfg.subjects):
        labels = np.array([Label.LEFT, Label.RIGHT] * ((cfg.trials_per_subject + 1) // 2))
        labels = labels[: cfg.trials_per_subject]
        rng.shuffle(labels)
        topo = rng.uniform(-cfg.phase_spread, cfg.phase_spread, cfg.channels)
        for k in range(cfg.trials_per_subject):
            label = Label(int(labels[k]))
            onset = rng.uniform(0, 2 * np.pi)
            data = rng.standard_normal((cfg.channels, n))
            ch = boosted_channels(label, cfg.channels)
            data[ch] += cfg.amplitude * np.sin(2 * np.pi * cfg.motif_hz * t[None, :] + onset + topo[ch, None])
            out.append(EegRecording(data, cfg.fs, label, trial_id=k, subject_id=s))
    return out


def generate_synthetic(cfg: SynthConfig, out_dir) -> Path:
    """Write every synthetic trial plus ``manifest.txt`` under ``out_dir``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in synthesize(cfg):
        name = f"sub{rec.subject_id:02d}_trial{rec.trial_id:02d}.eegt"
        write_trial(out_dir / name, rec)
        entries.append(entry_for(name, rec))
    path = out_dir / "manifest.txt"
    write_manifest(path, DatasetManifest(entries, out_dir))
    return path
