"""EEG preprocessing: re-referencing, band-pass filtering, decimation, z-scoring,
window extraction and leakage-safe pruning of training windows.

The fixed order is ``CAR -> band-pass -> downsample -> z-score -> windows``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DegenerateChannelError, ShapeError
from .tensor import Tensor


class Label(enum.IntEnum):
    LEFT = 0
    RIGHT = 1

    @classmethod
    def parse(cls, text) -> "Label":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        return cls[str(text).upper()]


@dataclass
class EegRecording:
    data: Tensor  # [channels, samples]
    fs: float
    label: Label
    trial_id: int = 0
    subject_id: int = 0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ShapeError(f"recording data must be [channels>=1, samples>=1], got {self.data.shape}")
        if not self.fs > 0:
            raise ConfigError(f"sampling rate must be positive, got {self.fs}")
        self.label = Label.parse(self.label)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: Tensor, fs: float | None = None) -> "EegRecording":
        return replace(self, data=data, fs=self.fs if fs is None else fs)


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    fs: float
    band: tuple[float, float]

    @property
    def delay(self) -> int:
        return (len(self.taps) - 1) // 2

    def response(self, freqs, nfft: int | None = None) -> np.ndarray:
        """Magnitude response at ``freqs`` (Hz) from a zero-padded DFT of the taps."""
        n = len(self.taps)
        nfft = nfft or 1 << int(np.ceil(np.log2(8 * n)))
        spectrum = np.abs(np.fft.rfft(self.taps, nfft))
        bins = np.rint(np.asarray(freqs, dtype=np.float64) * nfft / self.fs).astype(int)
        return spectrum[bins]


@dataclass
class Window:
    data: Tensor  # [T, C]
    label: Label
    trial_id: int
    start_sample: int
    end_sample: int
    subject_id: int = 0


@dataclass
class WindowSet:
    """A stack of equal-length windows with their provenance, one row per window."""

    data: Tensor  # [N, T, C]
    labels: np.ndarray
    trial_ids: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    subject_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.labels)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.trial_ids = np.asarray(self.trial_ids, dtype=np.int64)
        self.starts = np.asarray(self.starts, dtype=np.int64)
        self.ends = np.asarray(self.ends, dtype=np.int64)
        if self.subject_ids is None:
            self.subject_ids = np.zeros(n, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        if not (len(self.data) == len(self.trial_ids) == len(self.starts) == len(self.ends)
                == len(self.subject_ids) == n):
            raise ShapeError("window set fields disagree on the number of windows")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Window:
        return Window(self.data[i], Label(int(self.labels[i])), int(self.trial_ids[i]),
                      int(self.starts[i]), int(self.ends[i]), int(self.subject_ids[i]))

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.data[idx], self.labels[idx], self.trial_ids[idx],
                         self.starts[idx], self.ends[idx], self.subject_ids[idx])

    @classmethod
    def concat(cls, sets) -> "WindowSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        return cls(*(np.concatenate([getattr(s, f) for s in sets])
                     for f in ("data", "labels", "trial_ids", "starts", "ends", "subject_ids")))

    @classmethod
    def empty(cls, T: int = 1, C: int = 1) -> "WindowSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, T, C)), z, z, z, z, z)


# ------------------------------------------------------------------- stages


def common_average_reference(rec: EegRecording) -> EegRecording:
    if rec.channels < 2:
        raise ShapeError("common average reference needs at least 2 channels")
    return rec.with_data(rec.data - rec.data.mean(axis=0, keepdims=True))


def default_taps(fs: float) -> int:
    """Smallest odd tap count covering two seconds at ``fs``."""
    n = int(np.ceil(2 * fs))
    return n if n % 2 else n + 1


def _lowpass(cutoff: float, fs: float, taps: int) -> np.ndarray:
    m = np.arange(taps) - (taps - 1) // 2
    fc = cutoff / fs
    h = 2 * fc * np.sinc(2 * fc * m) * np.hamming(taps)
    return h / h.sum()


def design_bandpass(low: float, high: float, fs: float, taps: int | None = None) -> FirFilter:
    """Hamming-windowed-sinc band-pass: difference of two unit-DC low-pass kernels,
    scaled to unit gain at the band centre."""
    if taps is None:
        taps = default_taps(fs)
    if not 0 < low < high < fs / 2:
        raise ConfigError(f"band must satisfy 0 < low < high < fs/2, got ({low}, {high}) at fs={fs}")
    if taps < 3 or taps % 2 == 0:
        raise ConfigError(f"tap count must be odd and >= 3, got {taps}")
    h = _lowpass(high, fs, taps) - _lowpass(low, fs, taps)
    centre = 0.5 * (low + high)
    n = np.arange(taps)
    gain = abs(np.sum(h * np.exp(-2j * np.pi * centre / fs * n)))
    h = h / gain
    h = 0.5 * (h + h[::-1])  # exact symmetry
    return FirFilter(h, float(fs), (float(low), float(high)))


@lru_cache(maxsize=16)
def _cached_bandpass(low, high, fs, taps):
    return design_bandpass(low, high, fs, taps)


def filter_apply(rec: EegRecording, filt: FirFilter) -> EegRecording:
    """Zero-phase filtering: linear convolution shifted back by the group delay, zero-padded edges."""
    if rec.fs != filt.fs:
        raise ConfigError(f"recording fs {rec.fs} != filter design fs {filt.fs}")
    full = fftconvolve(rec.data, filt.taps[None, :], axes=1)
    d = filt.delay
    return rec.with_data(np.ascontiguousarray(full[:, d:d + rec.samples]))


def downsample(rec: EegRecording, target_fs: float) -> EegRecording:
    factor = int(round(rec.fs / target_fs))
    if factor < 1 or factor * target_fs != rec.fs:
        raise ConfigError(f"fs {rec.fs} is not an integer multiple of target {target_fs}")
    return rec.with_data(np.ascontiguousarray(rec.data[:, ::factor]), fs=float(target_fs))


def zscore(rec: EegRecording) -> EegRecording:
    mu = rec.data.mean(axis=1, keepdims=True)
    sd = rec.data.std(axis=1, keepdims=True)
    bad = np.flatnonzero(sd[:, 0] <= 1e-12 * np.maximum(1.0, np.abs(mu[:, 0])))
    if bad.size:
        raise DegenerateChannelError(
            f"trial {rec.trial_id}: channel {int(bad[0])} has zero variance"
        )
    return rec.with_data((rec.data - mu) / sd)


def window_samples(seconds: float, fs: float) -> int:
    return int(np.floor(seconds * fs + 0.5))


def slide_windows(rec: EegRecording, win_seconds: float, hop_seconds: float) -> WindowSet:
    T = window_samples(win_seconds, rec.fs)
    if hop_seconds <= 0:
        raise ConfigError("hop must be positive")
    hop = max(1, window_samples(hop_seconds, rec.fs))
    if T < 1 or T > rec.samples:
        raise ConfigError(f"window of {T} samples does not fit a trial of {rec.samples}")
    starts = np.arange(0, rec.samples - T + 1, hop)
    view = np.lib.stride_tricks.sliding_window_view(rec.data, T, axis=1)  # [C, S-T+1, T]
    data = np.ascontiguousarray(view[:, starts, :].transpose(1, 2, 0))  # [N, T, C]
    n = len(starts)
    return WindowSet(data, np.full(n, int(rec.label)), np.full(n, rec.trial_id), starts,
                     starts + T, np.full(n, rec.subject_id))


def prune_leaky(train: WindowSet, test: WindowSet) -> WindowSet:
    """Drop every training window whose [start, end) intersects a test window of the same trial."""
    if len(train) == 0 or len(test) == 0:
        return train
    keep = np.ones(len(train), dtype=bool)
    test_keys = np.stack([test.subject_ids, test.trial_ids], axis=1)
    for key in np.unique(test_keys, axis=0):
        in_test = (test.subject_ids == key[0]) & (test.trial_ids == key[1])
        in_train = np.flatnonzero((train.subject_ids == key[0]) & (train.trial_ids == key[1]))
        if in_train.size == 0:
            continue
        # merge test intervals into disjoint sorted runs
        order = np.argsort(test.starts[in_test], kind="stable")
        s, e = test.starts[in_test][order], test.ends[in_test][order]
        e = np.maximum.accumulate(e)
        new_run = np.r_[True, s[1:] >= e[:-1]]
        run_start = s[new_run]
        run_end = np.r_[e[np.flatnonzero(new_run)[1:] - 1], e[-1]]
        ts, te = train.starts[in_train], train.ends[in_train]
        # the last run starting before the train window's end is the only candidate
        j = np.searchsorted(run_start, te, side="left") - 1
        hit = (j >= 0) & (run_end[np.maximum(j, 0)] > ts)
        keep[in_train[hit]] = False
    return train.subset(np.flatnonzero(keep))


@dataclass(frozen=True)
class PreprocessConfig:
    band: tuple[float, float] = (1.0, 50.0)
    taps: int | None = None  # None -> default_taps(fs)
    fs_out: float = 128.0


def preprocess_recording(rec: EegRecording, cfg: PreprocessConfig = PreprocessConfig()) -> EegRecording:
    rec = common_average_reference(rec)
    rec = filter_apply(rec, _cached_bandpass(cfg.band[0], cfg.band[1], rec.fs, cfg.taps))
    rec = downsample(rec, cfg.fs_out)
    return zscore(rec)
