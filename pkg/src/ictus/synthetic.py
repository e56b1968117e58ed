"""Deterministic synthetic EEG with planted preictal structure.

Baseline activity is smoothed per-channel noise with a weak fixed
cross-channel mixing. Ahead of each seizure onset a shared sinusoid and a
shared low-frequency source ramp up linearly, raising inter-channel
coupling; annotations carry the exact configured onsets. Everything is a
pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Recording

__all__ = ["SynthConfig", "generate"]


@dataclass(frozen=True)
class SynthConfig:
    channels: int = 8
    sample_rate: float = 64.0
    duration_s: float = 3600.0
    onsets_s: tuple[float, ...] = ()
    seizure_duration_s: float = 60.0
    ramp_s: float = 1800.0
    coupling: float = 1.0
    osc_hz: float = 5.0
    osc_amplitude: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0
    patient_id: str = "synthetic"

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if self.channels < 1 or self.sample_rate <= 0 or self.duration_s <= 0:
            raise ValueError("channels, sample_rate and duration_s must be positive")
        if self.ramp_s < 0 or self.seizure_duration_s <= 0 or self.noise_scale < 0:
            raise ValueError("ramp_s must be >= 0, seizure_duration_s > 0, noise_scale >= 0")
        prev_end = -np.inf
        for onset in self.onsets_s:
            if onset - self.ramp_s < 0:
                raise ValueError(f"ramp before onset {onset} starts before the recording")
            if onset + self.seizure_duration_s > self.duration_s:
                raise ValueError(f"seizure at {onset} extends past the recording end")
            if onset - self.ramp_s < prev_end:
                raise ValueError(f"ramp before onset {onset} overlaps the previous seizure")
            prev_end = onset + self.seizure_duration_s
        if list(self.onsets_s) != sorted(self.onsets_s):
            raise ValueError("onsets must be sorted")


def _smooth_noise(rng: np.random.Generator, shape, width: int) -> np.ndarray:
    """Box-filtered white noise rescaled back to unit variance."""
    raw = rng.standard_normal(shape)
    if width <= 1:
        return raw
    kernel = np.ones(width) / width
    out = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), -1, raw)
    return out * np.sqrt(width)


def generate(cfg: SynthConfig) -> Recording:
    """Build one synthetic recording with its seizure annotations."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.channels
    total = int(round(cfg.duration_s * cfg.sample_rate))
    t = np.arange(total) / cfg.sample_rate

    width = max(1, int(round(cfg.sample_rate / 8)))
    base = _smooth_noise(rng, (n, total), width)
    mixing = np.eye(n) + 0.1 * rng.standard_normal((n, n)) / np.sqrt(n)
    x = cfg.noise_scale * (mixing @ base)

    ramp = np.zeros(total)
    annotations = []
    for onset in cfg.onsets_s:
        offset = onset + cfg.seizure_duration_s
        annotations.append((float(onset), float(offset)))
        if cfg.ramp_s > 0:
            rising = (t >= onset - cfg.ramp_s) & (t < onset)
            ramp[rising] = np.maximum(ramp[rising], (t[rising] - (onset - cfg.ramp_s)) / cfg.ramp_s)
        ictal = (t >= onset) & (t < offset)
        ramp[ictal] = 1.0

    shared_slow = _smooth_noise(rng, total, max(1, int(round(cfg.sample_rate / 2))))
    gains = rng.uniform(0.8, 1.2, size=n)
    planted = cfg.osc_amplitude * np.sin(2 * np.pi * cfg.osc_hz * t) + cfg.coupling * shared_slow
    x += gains[:, None] * (ramp * planted)[None, :]

    return Recording(
        patient_id=cfg.patient_id,
        sample_rate=cfg.sample_rate,
        samples=x,
        annotations=annotations,
    )
