"""Objective evaluation: mel-domain MAE, mel-cepstral distortion, synthesis.

Both metrics share the training front end (80-band natural-log mels).
Cepstra are the orthonormal DCT-II of each log-mel frame; MCD uses
coefficients 1..13 (energy coefficient excluded) with the classic
dB scaling, frame-aligned (no time warping: vocoded audio is
time-synchronous with its reference mel by construction).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import torch

from .audio_io import MelSpectrogram, WaveformClip, mel_spectrogram, write_wav
from .config import FeatureConfig

logger = logging.getLogger(__name__)

MCD_COEFFS = 13
_MCD_SCALE = 10.0 / math.log(10.0)


def _aligned_mels(
    reference: np.ndarray, generated: np.ndarray, cfg: FeatureConfig
) -> tuple[MelSpectrogram, MelSpectrogram, int]:
    """Trim both waveforms to the common whole-hop length, then take mels."""
    n = min(len(reference), len(generated)) // cfg.hop_size * cfg.hop_size
    if n < cfg.hop_size:
        raise ValueError("waveforms shorter than one hop; nothing to compare")
    trimmed = (len(reference) - n) + (len(generated) - n)
    if trimmed:
        logger.debug("trimmed %d samples to align waveforms at %d", trimmed, n)
    ref_mel = mel_spectrogram(
        WaveformClip(reference[:n].astype(np.float32), cfg.sample_rate_hz, "ref"), cfg
    )
    gen_mel = mel_spectrogram(
        WaveformClip(generated[:n].astype(np.float32), cfg.sample_rate_hz, "gen"), cfg
    )
    return ref_mel, gen_mel, trimmed


def mae_mel(
    reference_wave: np.ndarray, generated_wave: np.ndarray, cfg: FeatureConfig
) -> float:
    """Mean absolute difference over all log-mel entries of the two signals."""
    ref_mel, gen_mel, _ = _aligned_mels(reference_wave, generated_wave, cfg)
    return float(np.mean(np.abs(ref_mel.values - gen_mel.values)))


def mel_cepstra(log_mel: np.ndarray, n_coeffs: int = MCD_COEFFS) -> np.ndarray:
    """Coefficients 1..n_coeffs of the orthonormal DCT-II per frame."""
    ceps = scipy.fft.dct(log_mel, type=2, axis=0, norm="ortho")
    return ceps[1 : n_coeffs + 1]


def mcd_from_mels(ref_mel: np.ndarray, gen_mel: np.ndarray) -> float:
    """Mean per-frame mel-cepstral distortion in dB between two log-mels."""
    if ref_mel.shape != gen_mel.shape:
        raise ValueError(f"mel shapes differ: {ref_mel.shape} vs {gen_mel.shape}")
    if ref_mel.shape[1] < 1:
        raise ValueError("need at least one frame for MCD")
    diff = mel_cepstra(ref_mel) - mel_cepstra(gen_mel)
    per_frame = _MCD_SCALE * np.sqrt(2.0 * np.sum(diff**2, axis=0))
    return float(np.mean(per_frame))


def mcd(
    reference_wave: np.ndarray, generated_wave: np.ndarray, cfg: FeatureConfig
) -> float:
    """Frame-aligned MCD (dB) between reference and generated audio."""
    ref_mel, gen_mel, _ = _aligned_mels(reference_wave, generated_wave, cfg)
    return mcd_from_mels(ref_mel.values, gen_mel.values)


def evaluate_pair(
    reference_wave: np.ndarray, generated_wave: np.ndarray, cfg: FeatureConfig
) -> tuple[float, float, int]:
    """(MAE, MCD dB, n_frames) for one clip pair, computed on one alignment."""
    ref_mel, gen_mel, _ = _aligned_mels(reference_wave, generated_wave, cfg)
    mae = float(np.mean(np.abs(ref_mel.values - gen_mel.values)))
    mcd_db = mcd_from_mels(ref_mel.values, gen_mel.values)
    return mae, mcd_db, ref_mel.n_frames


@dataclass
class EvalReport:
    """Per-clip metric rows plus frame-count-weighted aggregates."""

    rows: list[dict]
    mae_mean: float
    mae_std: float
    mcd_mean: float
    mcd_std: float
    total_frames: int

    @staticmethod
    def from_rows(rows: list[dict]) -> "EvalReport":
        if not rows:
            return EvalReport([], 0.0, 0.0, 0.0, 0.0, 0)
        weights = np.array([r["n_frames"] for r in rows], dtype=np.float64)
        total = weights.sum()

        def weighted(key: str) -> tuple[float, float]:
            x = np.array([r[key] for r in rows], dtype=np.float64)
            mean = float(np.sum(x * weights) / total)
            var = float(np.sum(weights * (x - mean) ** 2) / total)
            return mean, math.sqrt(max(var, 0.0))

        mae_mean, mae_std = weighted("mae")
        mcd_mean, mcd_std = weighted("mcd_dB")
        return EvalReport(rows, mae_mean, mae_std, mcd_mean, mcd_std, int(total))

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "eval_report.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_id", "mae", "mcd_dB", "n_frames"])
            for r in self.rows:
                writer.writerow([r["clip_id"], repr(r["mae"]), repr(r["mcd_dB"]), r["n_frames"]])
        json_path = out / "eval_summary.json"
        json_path.write_text(
            json.dumps(
                {
                    "n_clips": len(self.rows),
                    "total_frames": self.total_frames,
                    "mae_mean": self.mae_mean,
                    "mae_std": self.mae_std,
                    "mcd_mean": self.mcd_mean,
                    "mcd_std": self.mcd_std,
                },
                indent=2,
            )
            + "\n"
        )
        return csv_path, json_path


def synthesize_from_mel(generator: torch.nn.Module, mel_values: np.ndarray) -> np.ndarray:
    """Run the generator on one [n_mels, T] log-mel; returns [T * hop] samples."""
    generator.eval()
    with torch.no_grad():
        wave = generator(torch.from_numpy(mel_values).float().unsqueeze(0))
    return wave.squeeze(0).numpy()


def synthesize_clips(
    generator: torch.nn.Module,
    clips: list[WaveformClip],
    cfg: FeatureConfig,
    out_dir: str | Path,
) -> list[dict]:
    """Vocode each clip from its ground-truth mel and write 16-bit PCM WAVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for clip in clips:
        mel = mel_spectrogram(clip, cfg)
        wave = synthesize_from_mel(generator, mel.values)
        path = out / f"{clip.clip_id}.wav"
        clipped = write_wav(path, wave, cfg.sample_rate_hz)
        results.append(
            {
                "clip_id": clip.clip_id,
                "path": str(path),
                "n_samples": len(wave),
                "clipped_samples": clipped,
            }
        )
    return results


def evaluate_clips(
    generator: torch.nn.Module,
    clips: list[WaveformClip],
    cfg: FeatureConfig,
    dump_mels_dir: str | Path | None = None,
    generated: dict[str, np.ndarray] | None = None,
) -> EvalReport:
    """Score clips against their vocoded (or externally supplied) waveforms.

    ``generated`` maps clip_id to a precomputed waveform and bypasses the
    generator (used for ground-truth self-comparison).
    """
    rows = []
    for clip in sorted(clips, key=lambda c: c.clip_id):
        if generated is not None and clip.clip_id in generated:
            synth = generated[clip.clip_id]
        else:
            mel = mel_spectrogram(clip, cfg)
            synth = synthesize_from_mel(generator, mel.values)
        mae, mcd_db, n_frames = evaluate_pair(clip.samples, synth, cfg)
        if dump_mels_dir is not None:
            dump = Path(dump_mels_dir)
            dump.mkdir(parents=True, exist_ok=True)
            ref_mel, gen_mel, _ = _aligned_mels(clip.samples, synth, cfg)
            np.save(dump / f"{clip.clip_id}_ref.npy", ref_mel.values)
            np.save(dump / f"{clip.clip_id}_gen.npy", gen_mel.values)
        rows.append(
            {"clip_id": clip.clip_id, "mae": mae, "mcd_dB": mcd_db, "n_frames": n_frames}
        )
    return EvalReport.from_rows(rows)
