"""Corruption pretext tasks: five pure maps from a clean window to a noisy
or masked one, plus pairing for denoising pretraining.

All strategies operate in the time domain on the raw window matrix and are
deterministic given (window, spec): per-window seeds derive from the spec
seed and the window's source, so pair generation is order-independent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .signals import SignalWindow

STRATEGIES = ("jitter", "random_sample", "remove_channel", "mask_window", "jitter_window")
SAMPLE_MODES = ("neighbor_average", "zeros")

DEFAULT_CHANNEL = 2  # F3 in the bundled 10-20 layout order


@dataclass(frozen=True)
class CorruptionSpec:
    """Which strategy to apply and its knobs."""

    strategy: str = "jitter"
    noise_variance_fraction: float = 0.05
    point_fraction: float = 0.2
    channel: int = DEFAULT_CHANNEL
    sample_mode: str = "neighbor_average"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}"
            )
        if not 0.0 <= self.noise_variance_fraction <= 1.0:
            raise ValueError(f"noise_variance_fraction must be in [0, 1], got {self.noise_variance_fraction}")
        if not 0.0 <= self.point_fraction < 1.0:
            raise ValueError(f"point_fraction must be in [0, 1), got {self.point_fraction}")
        if self.sample_mode not in SAMPLE_MODES:
            raise ValueError(f"unknown sample_mode {self.sample_mode!r}; valid: {', '.join(SAMPLE_MODES)}")
        if self.channel < 0:
            raise ValueError(f"channel index must be non-negative, got {self.channel}")


@dataclass
class PretextPair:
    """A (corrupted, clean) training example for denoising."""

    corrupted: SignalWindow
    clean: SignalWindow
    spec: CorruptionSpec


def _clone(window: SignalWindow, matrix: np.ndarray) -> SignalWindow:
    return SignalWindow(matrix=matrix, label=window.label, source=window.source)


def jitter(window: SignalWindow, noise_variance_fraction: float, seed: int) -> SignalWindow:
    """Superimpose i.i.d. Normal(mean(S), fraction * Var(S)) noise everywhere."""
    s = window.matrix
    rng = np.random.default_rng(seed)
    noise = rng.normal(s.mean(), np.sqrt(noise_variance_fraction * s.var()), size=s.shape)
    return _clone(window, s + noise)


def random_sample(
    window: SignalWindow, point_fraction: float, sample_mode: str, seed: int
) -> SignalWindow:
    """Replace a fraction of interior points per channel.

    ``neighbor_average`` sets each chosen point to the mean of its original
    neighbors; ``zeros`` blanks it. Endpoints are never chosen.
    """
    s = window.matrix
    tp = s.shape[1]
    if tp < 3:
        raise ValueError(f"need at least 3 timepoints, got {tp}")
    k = int(point_fraction * (tp - 2))
    out = s.copy()
    rng = np.random.default_rng(seed)
    for ch in range(s.shape[0]):
        idx = rng.choice(np.arange(1, tp - 1), size=k, replace=False)
        if sample_mode == "neighbor_average":
            out[ch, idx] = 0.5 * (s[ch, idx - 1] + s[ch, idx + 1])
        else:
            out[ch, idx] = 0.0
    return _clone(window, out)


def remove_channel(window: SignalWindow, channel: int) -> SignalWindow:
    """Zero one whole channel; everything else is untouched."""
    if not 0 <= channel < window.num_channels:
        raise ValueError(f"channel {channel} out of range for {window.num_channels} channels")
    out = window.matrix.copy()
    out[channel] = 0.0
    return _clone(window, out)


def _mask_length(point_fraction: float, tp: int) -> int:
    run = int(point_fraction * tp)
    if run < 1:
        raise ValueError(f"mask length floor({point_fraction} * {tp}) must be at least 1")
    return run


def mask_window(window: SignalWindow, point_fraction: float, seed: int) -> SignalWindow:
    """Zero one contiguous run per channel; starts drawn independently."""
    s = window.matrix
    tp = s.shape[1]
    run = _mask_length(point_fraction, tp)
    out = s.copy()
    rng = np.random.default_rng(seed)
    for ch in range(s.shape[0]):
        start = int(rng.integers(0, tp - run + 1))
        out[ch, start:start + run] = 0.0
    return _clone(window, out)


def jitter_window(
    window: SignalWindow, noise_variance_fraction: float, point_fraction: float, seed: int
) -> SignalWindow:
    """Add jitter noise inside one randomly-placed run per channel."""
    s = window.matrix
    tp = s.shape[1]
    run = _mask_length(point_fraction, tp)
    mu = s.mean()
    std = np.sqrt(noise_variance_fraction * s.var())
    out = s.copy()
    rng = np.random.default_rng(seed)
    for ch in range(s.shape[0]):
        start = int(rng.integers(0, tp - run + 1))
        out[ch, start:start + run] += rng.normal(mu, std, size=run)
    return _clone(window, out)


def apply_corruption(window: SignalWindow, spec: CorruptionSpec, seed: int | None = None) -> SignalWindow:
    """Dispatch one strategy; ``seed`` overrides spec.seed when given."""
    s = spec.seed if seed is None else seed
    if spec.strategy == "jitter":
        return jitter(window, spec.noise_variance_fraction, s)
    if spec.strategy == "random_sample":
        return random_sample(window, spec.point_fraction, spec.sample_mode, s)
    if spec.strategy == "remove_channel":
        return remove_channel(window, spec.channel)
    if spec.strategy == "mask_window":
        return mask_window(window, spec.point_fraction, s)
    return jitter_window(window, spec.noise_variance_fraction, spec.point_fraction, s)


def derive_seed(seed: int, source: tuple[str, int]) -> int:
    """Stable per-window seed from the spec seed and window provenance."""
    digest = hashlib.sha256(f"{seed}|{source[0]}|{source[1]}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_pairs(windows: list[SignalWindow], spec: CorruptionSpec) -> list[PretextPair]:
    """One (corrupted, clean) pair per window, reproducibly seeded."""
    pairs = []
    for w in windows:
        corrupted = apply_corruption(w, spec, seed=derive_seed(spec.seed, w.source))
        pairs.append(PretextPair(corrupted=corrupted, clean=w, spec=spec))
    return pairs
