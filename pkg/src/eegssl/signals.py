"""Recording ingestion, synthetic EEG corpus, splitting, windowing, features.

Recordings travel as CSV (one file per recording, header comment carrying
subject id and sampling rate). The synthetic generator is the desk-scale
stand-in for a clinical corpus: alpha-band background plus a strong 3 Hz
burst on seizure windows.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-8

# Background sinusoid band and burst parameters for the synthetic corpus.
_BACKGROUND_BAND = (8.0, 12.0)
_NUM_BACKGROUND_TONES = 3
_NOISE_FRACTION = 0.2
_BURST_HZ = 3.0
_BURST_GAIN = 3.0
_MIN_BURST_CHANNELS = 8


@dataclass
class Recording:
    """A multichannel signal with per-sample binary seizure labels."""

    subject_id: str
    sampling_rate_hz: float
    channel_names: list[str]
    samples: np.ndarray  # channels x total_timepoints
    labels: np.ndarray  # total_timepoints, values in {0, 1}

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.sampling_rate_hz <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channel_names):
            raise ValueError(
                f"samples shape {self.samples.shape} does not match "
                f"{len(self.channel_names)} channel names"
            )
        if self.labels.shape != (self.samples.shape[1],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match "
                f"{self.samples.shape[1]} timepoints"
            )


@dataclass
class SignalWindow:
    """One fixed-length window; label is the OR of its sample labels."""

    matrix: np.ndarray  # channels x timepoints
    label: int
    source: tuple[str, int]  # (subject_id, start index)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def num_channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_timepoints(self) -> int:
        return self.matrix.shape[1]


@dataclass
class FeatureTensor:
    """Log-amplitude spectra: steps x nodes x features."""

    x: np.ndarray  # T x N x P
    provenance: str

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)


@dataclass
class SplitManifest:
    """Subject-disjoint train/val/test subject id lists."""

    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = sets[i] & sets[j]
                if overlap:
                    raise ValueError(f"split partitions share subjects: {sorted(overlap)}")

    def to_json(self) -> str:
        return json.dumps(
            {"train": self.train, "val": self.val, "test": self.test, "seed": self.seed},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        obj = json.loads(text)
        return cls(train=obj["train"], val=obj["val"], test=obj["test"], seed=obj["seed"])


def synth_corpus(
    n_subjects: int,
    windows_per_subject: int,
    seizure_fraction: float,
    seed: int,
    n_channels: int = 19,
    sampling_rate_hz: float = 50.0,
    window_len: int = 200,
    channel_names: list[str] | None = None,
) -> list[Recording]:
    """Generate a deterministic synthetic corpus.

    Background per channel: three sinusoids with random frequencies in the
    8-12 Hz band and random phases, plus Gaussian noise with sigma 0.2x the
    sinusoid amplitude. Seizure windows add a 3 Hz burst at 3x background
    amplitude on a random subset of at least 8 channels; burst samples are
    labeled 1. One RNG stream per (seed, subject) keeps output independent
    of evaluation order.
    """
    if n_subjects <= 0 or windows_per_subject <= 0 or window_len <= 0:
        raise ValueError("subject, window, and length counts must be positive")
    if not 0.0 <= seizure_fraction <= 1.0:
        raise ValueError(f"seizure_fraction must be in [0, 1], got {seizure_fraction}")
    if channel_names is None:
        channel_names = [f"CH{i:02d}" for i in range(n_channels)]
    if len(channel_names) != n_channels:
        raise ValueError("channel_names length does not match n_channels")

    children = np.random.SeedSequence(seed).spawn(n_subjects)
    recordings = []
    total = windows_per_subject * window_len
    t = np.arange(total) / sampling_rate_hz
    n_seiz = int(round(seizure_fraction * windows_per_subject))
    for idx in range(n_subjects):
        rng = np.random.default_rng(children[idx])
        samples = np.zeros((n_channels, total))
        for ch in range(n_channels):
            freqs = rng.uniform(*_BACKGROUND_BAND, size=_NUM_BACKGROUND_TONES)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=_NUM_BACKGROUND_TONES)
            for f, p in zip(freqs, phases):
                samples[ch] += np.sin(2.0 * np.pi * f * t + p)
            samples[ch] += rng.normal(0.0, _NOISE_FRACTION, size=total)
        labels = np.zeros(total, dtype=np.int8)
        seizure_windows = rng.choice(windows_per_subject, size=n_seiz, replace=False)
        for w in sorted(seizure_windows):
            lo, hi = w * window_len, (w + 1) * window_len
            n_burst = int(rng.integers(_MIN_BURST_CHANNELS, n_channels + 1))
            burst_channels = rng.choice(n_channels, size=n_burst, replace=False)
            for ch in sorted(burst_channels):
                phase = rng.uniform(0.0, 2.0 * np.pi)
                samples[ch, lo:hi] += _BURST_GAIN * np.sin(
                    2.0 * np.pi * _BURST_HZ * t[lo:hi] + phase
                )
            labels[lo:hi] = 1
        recordings.append(
            Recording(
                subject_id=f"subj{idx:03d}",
                sampling_rate_hz=sampling_rate_hz,
                channel_names=list(channel_names),
                samples=samples,
                labels=labels,
            )
        )
    return recordings


def split_by_subject(
    recordings: list[Recording], val_frac: float, test_frac: float, seed: int
) -> SplitManifest:
    """Partition subjects (never windows) into train/val/test.

    Counts follow round(frac * n) with a floor of one subject per held-out
    partition; at least one training subject must remain.
    """
    if not 0.0 < val_frac < 1.0 or not 0.0 < test_frac < 1.0 or val_frac + test_frac >= 1.0:
        raise ValueError(f"fractions must lie in (0,1) and sum below 1, got {val_frac}, {test_frac}")
    subjects = []
    for rec in recordings:
        if rec.subject_id not in subjects:
            subjects.append(rec.subject_id)
    n = len(subjects)
    if n < 3:
        raise ValueError(f"need at least 3 subjects to split, got {n}")
    n_val = max(1, int(round(val_frac * n)))
    n_test = max(1, int(round(test_frac * n)))
    if n_val + n_test >= n:
        raise ValueError(f"fractions leave no training subjects for {n} subjects")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    return SplitManifest(
        train=sorted(shuffled[n_val + n_test:]),
        val=sorted(shuffled[:n_val]),
        test=sorted(shuffled[n_val:n_val + n_test]),
        seed=seed,
    )


def segment_windows(recording: Recording, window_seconds: float) -> list[SignalWindow]:
    """Cut non-overlapping contiguous windows; trailing remainder is dropped."""
    length = window_seconds * recording.sampling_rate_hz
    window_len = int(round(length))
    if window_len <= 0 or abs(length - window_len) > 1e-9:
        raise ValueError(
            f"window_seconds * sampling_rate must be a positive integer, got {length}"
        )
    total = recording.samples.shape[1]
    windows = []
    for start in range(0, total - window_len + 1, window_len):
        stop = start + window_len
        windows.append(
            SignalWindow(
                matrix=recording.samples[:, start:stop].copy(),
                label=int(recording.labels[start:stop].any()),
                source=(recording.subject_id, start),
            )
        )
    return windows


def featurize(window: SignalWindow, steps: int | None = None) -> FeatureTensor:
    """FFT log-amplitude features per equal sub-segment of the window.

    Splits the window into ``steps`` segments of m points each, keeps DFT
    magnitude bins 1..m//2 per channel (DC excluded), and applies
    log(max(amplitude, 1e-8)). Output is steps x channels x m//2.
    """
    tp = window.num_timepoints
    if steps is None:
        if tp % 12 != 0:
            raise ValueError(f"{tp} timepoints not divisible by the default 12 steps")
        steps = 12
    if steps <= 0 or tp % steps != 0:
        raise ValueError(f"timepoints {tp} not divisible into {steps} steps")
    m = tp // steps
    if m < 2:
        raise ValueError(f"segments of {m} timepoints carry no non-DC bins")
    segments = window.matrix.reshape(window.num_channels, steps, m)
    mags = np.abs(np.fft.rfft(segments, axis=2))[:, :, 1 : m // 2 + 1]
    feats = np.log(np.maximum(mags, LOG_FLOOR))
    return FeatureTensor(
        x=np.ascontiguousarray(feats.transpose(1, 0, 2)),
        provenance=f"{window.source[0]}:{window.source[1]}",
    )


# -- recording CSV interchange --------------------------------------------------

_HEADER_RE = re.compile(r"^#\s*subject=(\S+)\s+fs=([0-9.eE+-]+)\s*$")


def save_recording_csv(recording: Recording, path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as f:
        f.write(f"# subject={recording.subject_id} fs={float(recording.sampling_rate_hz)!r}\n")
        f.write("t,label," + ",".join(recording.channel_names) + "\n")
        for i in range(recording.samples.shape[1]):
            row = ",".join(repr(float(v)) for v in recording.samples[:, i])
            f.write(f"{i},{int(recording.labels[i])},{row}\n")


def load_recording_csv(path: str | Path) -> Recording:
    path = Path(path)
    with path.open() as f:
        header = f.readline()
        m = _HEADER_RE.match(header)
        if m is None:
            raise ValueError(f"{path}: malformed header line {header!r}")
        subject_id, fs = m.group(1), float(m.group(2))
        columns = f.readline().strip().split(",")
        if columns[:2] != ["t", "label"]:
            raise ValueError(f"{path}: expected 't,label,...' column row, got {columns[:2]}")
        channel_names = columns[2:]
        labels, rows = [], []
        for line in f:
            parts = line.strip().split(",")
            labels.append(int(parts[1]))
            rows.append([float(v) for v in parts[2:]])
    samples = np.asarray(rows, dtype=np.float64).T
    if samples.size == 0:
        samples = samples.reshape(len(channel_names), 0)
    return Recording(
        subject_id=subject_id,
        sampling_rate_hz=fs,
        channel_names=channel_names,
        samples=samples,
        labels=np.asarray(labels, dtype=np.int8),
    )


def save_corpus(recordings: list[Recording], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in recordings:
        p = directory / f"{rec.subject_id}.csv"
        save_recording_csv(rec, p)
        paths.append(p)
    return paths


def load_corpus(directory: str | Path) -> list[Recording]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no recording CSVs found in {directory}")
    return [load_recording_csv(p) for p in paths]


def windows_for_subjects(
    recordings: list[Recording], subjects: list[str], window_seconds: float
) -> list[SignalWindow]:
    wanted = set(subjects)
    out = []
    for rec in recordings:
        if rec.subject_id in wanted:
            out.extend(segment_windows(rec, window_seconds))
    return out
