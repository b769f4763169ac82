"""Time/frequency interval masking of mel-spectrograms (positive views)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .audio_io import MelSpectrogram
from .config import FeatureConfig, MaskSpec


@dataclass(frozen=True)
class MaskInterval:
    axis: str  # "time" or "freq"
    start: int
    width: int

    def to_json(self) -> dict:
        return asdict(self)


def _resolved_max_time_width(spec: MaskSpec, n_frames: int) -> int:
    # 0 = auto: ceil(n_frames / 8), SpecAugment-style default
    width = spec.max_time_width if spec.max_time_width > 0 else math.ceil(n_frames / 8)
    return min(width, n_frames)


def mask_mel(
    mel: MelSpectrogram,
    spec: MaskSpec,
    rng: np.random.Generator,
    log_floor: float | None = None,
) -> tuple[MelSpectrogram, list[MaskInterval]]:
    """Mask random time/frequency intervals; entries outside them untouched.

    Fill is either the log-domain silence floor (default) or the per-band
    mean of the input. Draw order is fixed (time masks then freq masks,
    width before start) so a seeded rng reproduces the exact report.
    """
    values = mel.values
    n_mels, n_frames = values.shape
    if n_frames == 0 or n_mels == 0:
        raise ValueError("cannot mask an empty mel-spectrogram")
    max_t = _resolved_max_time_width(spec, n_frames)
    if spec.n_time_masks > 0 and max_t < 1:
        raise ValueError(f"time mask width resolves to {max_t} on {n_frames} frames")
    if spec.max_freq_width > n_mels:
        raise ValueError(
            f"max_freq_width={spec.max_freq_width} exceeds n_mels={n_mels}"
        )

    if spec.fill == "log_floor":
        fill_value = math.log(1e-5) if log_floor is None else math.log(log_floor)
        band_fill = np.full(n_mels, fill_value, dtype=values.dtype)
    else:  # band_mean
        band_fill = values.mean(axis=1)

    out = values.copy()
    report: list[MaskInterval] = []
    for _ in range(spec.n_time_masks):
        width = int(rng.integers(1, max_t + 1))
        start = int(rng.integers(0, n_frames - width + 1))
        out[:, start : start + width] = band_fill[:, None]
        report.append(MaskInterval("time", start, width))
    for _ in range(spec.n_freq_masks):
        width = int(rng.integers(1, spec.max_freq_width + 1))
        start = int(rng.integers(0, n_mels - width + 1))
        out[start : start + width, :] = band_fill[start : start + width, None]
        report.append(MaskInterval("freq", start, width))

    masked = MelSpectrogram(
        values=out,
        n_mels=mel.n_mels,
        hop_size=mel.hop_size,
        source_clip_id=mel.source_clip_id,
    )
    return masked, report


def mask_mel_array(
    values: np.ndarray,
    spec: MaskSpec,
    rng: np.random.Generator,
    cfg: FeatureConfig,
) -> np.ndarray:
    """Array-in/array-out convenience used by the trainer's batch path."""
    mel = MelSpectrogram(
        values=values, n_mels=values.shape[0], hop_size=cfg.hop_size, source_clip_id=""
    )
    masked, _ = mask_mel(mel, spec, rng, log_floor=cfg.log_floor_eps)
    return masked.values
