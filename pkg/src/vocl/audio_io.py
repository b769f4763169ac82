"""Corpus ingestion, waveform <-> mel conversion, segment sampling, subsets.

Everything here is a pure function of (inputs, rng state): safe for
parallel prefetch as long as consumers preserve the single-threaded
(clip_id, offset) order for a given seed.
"""

from __future__ import annotations

import json
import wave as wave_module
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import FeatureConfig


class CorpusError(RuntimeError):
    """Corpus layout or audio decoding problem; message names the clip."""


@dataclass(frozen=True)
class CorpusEntry:
    clip_id: str
    path: str
    duration_s: float


@dataclass(frozen=True)
class AudioCorpus:
    """Train/validation entry lists, each sorted deterministically."""

    train: tuple[CorpusEntry, ...]
    validation: tuple[CorpusEntry, ...]
    sample_rate_hz: int

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_validation(self) -> int:
        return len(self.validation)


@dataclass(frozen=True)
class SplitSpec:
    """How to carve validation out of the corpus.

    If ``<root>/validation.txt`` (or ``file``) exists it lists validation
    clip_ids, one per line; otherwise the last ``count`` sorted clip_ids
    become validation.
    """

    file: str | None = None
    count: int = 150


@dataclass
class WaveformClip:
    samples: np.ndarray  # float32 in [-1, 1], shape (n,)
    sample_rate_hz: int
    clip_id: str
    offset_samples: int = 0
    padded_samples: int = 0  # trailing zeros appended by segment sampling


@dataclass
class MelSpectrogram:
    values: np.ndarray  # float32, shape (n_mels, n_frames), natural-log magnitude
    n_mels: int
    hop_size: int
    source_clip_id: str

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV files


def read_wav(path: str | Path, clip_id: str = "") -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV into float32 samples in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"missing audio file for clip {clip_id or path.stem!r}: {path}")
    try:
        with wave_module.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave_module.Error, EOFError) as exc:
        raise CorpusError(f"cannot decode clip {clip_id or path.stem!r}: {exc}") from exc
    if n_channels != 1 or sampwidth != 2:
        raise CorpusError(
            f"clip {clip_id or path.stem!r} is not 16-bit PCM mono "
            f"(channels={n_channels}, sample_width={sampwidth})"
        )
    data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return data, rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> int:
    """Write float samples as 16-bit PCM mono; returns count of clipped samples."""
    x = np.asarray(samples, dtype=np.float64)
    clipped = int(np.count_nonzero((x < -1.0) | (x > 1.0)))
    x = np.clip(x, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave_module.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(pcm.tobytes())
    return clipped


def _wav_header(path: Path, clip_id: str) -> tuple[int, int]:
    """(n_samples, sample_rate) from the WAV header without reading data."""
    try:
        with wave_module.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
                raise CorpusError(
                    f"clip {clip_id!r} is not 16-bit PCM mono: {path}"
                )
            return wf.getnframes(), wf.getframerate()
    except (wave_module.Error, EOFError) as exc:
        raise CorpusError(f"cannot decode clip {clip_id!r}: {exc}") from exc


def load_clip(entry: CorpusEntry, expected_sr: int) -> WaveformClip:
    samples, rate = read_wav(entry.path, entry.clip_id)
    if rate != expected_sr:
        raise CorpusError(
            f"clip {entry.clip_id!r} sample rate {rate} != corpus rate {expected_sr}"
        )
    return WaveformClip(samples=samples, sample_rate_hz=rate, clip_id=entry.clip_id)


# ---------------------------------------------------------------------------
# Corpus loading


def load_corpus(root_dir: str | Path, split: SplitSpec | None = None) -> AudioCorpus:
    """Load an LJSpeech-format corpus directory.

    Layout: ``metadata.csv`` with pipe-delimited ``clip_id|transcript|normalized``
    rows (transcripts ignored) and ``wavs/<clip_id>.wav``.
    """
    split = split or SplitSpec()
    root = Path(root_dir)
    meta = root / "metadata.csv"
    if not meta.exists():
        raise CorpusError(f"no metadata.csv in {root} (0 entries)")
    clip_ids: list[str] = []
    seen: set[str] = set()
    for line in meta.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        clip_id = line.split("|", 1)[0].strip()
        if clip_id in seen:
            raise CorpusError(f"duplicate clip_id {clip_id!r} in metadata.csv")
        seen.add(clip_id)
        clip_ids.append(clip_id)
    if not clip_ids:
        raise CorpusError(f"metadata.csv in {root} lists 0 entries")
    clip_ids.sort()

    entries: list[CorpusEntry] = []
    sample_rate: int | None = None
    for clip_id in clip_ids:
        path = root / "wavs" / f"{clip_id}.wav"
        if not path.exists():
            raise CorpusError(f"missing audio file for clip {clip_id!r}: {path}")
        n_samples, rate = _wav_header(path, clip_id)
        if sample_rate is None:
            sample_rate = rate
        elif rate != sample_rate:
            raise CorpusError(
                f"clip {clip_id!r} sample rate {rate} != corpus rate {sample_rate}"
            )
        entries.append(CorpusEntry(clip_id, str(path), n_samples / rate))

    split_file = Path(split.file) if split.file else root / "validation.txt"
    if split_file.exists():
        val_ids = {
            line.strip()
            for line in split_file.read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
        unknown = val_ids - seen
        if unknown:
            raise CorpusError(
                f"validation split lists unknown clip_ids: {sorted(unknown)[:5]}"
            )
    else:
        val_ids = (
            {e.clip_id for e in entries[-split.count :]} if split.count > 0 else set()
        )

    train = tuple(e for e in entries if e.clip_id not in val_ids)
    validation = tuple(e for e in entries if e.clip_id in val_ids)
    return AudioCorpus(train=train, validation=validation, sample_rate_hz=sample_rate)


def select_subset(corpus: AudioCorpus, fraction: float, seed: int) -> AudioCorpus:
    """Deterministic data-limited subset: seeded shuffle of the sorted
    training clip_ids, prefix of ceil(fraction * N) taken.

    The single shuffled order makes subsets nested: with one seed, the 4%
    subset is a prefix of the 20% subset. Validation is unchanged.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction={fraction} must be in (0, 1]")
    ordered = sorted(corpus.train, key=lambda e: e.clip_id)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    count = int(np.ceil(fraction * len(ordered)))
    chosen = tuple(ordered[i] for i in perm[:count])
    return AudioCorpus(
        train=chosen, validation=corpus.validation, sample_rate_hz=corpus.sample_rate_hz
    )


# ---------------------------------------------------------------------------
# Mel filterbank (Slaney-style mel scale, area-normalized triangles)


def _hz_to_mel(freq_hz: np.ndarray | float) -> np.ndarray:
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asanyarray(freq_hz, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    above = f >= min_log_hz
    mel = np.where(above, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mel)
    return mel


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    mel = np.asanyarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    hz = mel * f_sp
    above = mel >= min_log_mel
    return np.where(above, min_log_hz * np.exp(logstep * (mel - min_log_mel)), hz)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """[n_mels x (n_fft/2 + 1)] triangular filterbank, rows area-normalized."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, cfg.sample_rate_hz / 2.0, n_bins)
    mel_pts = np.linspace(
        _hz_to_mel(cfg.fmin_hz), _hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2
    )
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-10)
        down = (hi - fft_freqs) / max(hi - center, 1e-10)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (hi - lo)  # area normalization
    return fb.astype(np.float32)


def band_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel band; useful for oracle fixtures."""
    mel_pts = np.linspace(
        _hz_to_mel(cfg.fmin_hz), _hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2
    )
    return _mel_to_hz(mel_pts)[1:-1]


def dump_filterbank(cfg: FeatureConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the filterbank matrix (little-endian float32) + config sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fb = mel_filterbank(cfg).astype("<f4")
    bin_path = out / "mel_filterbank.bin"
    bin_path.write_bytes(fb.tobytes(order="C"))
    sidecar = out / "mel_filterbank.json"
    sidecar.write_text(
        json.dumps(
            {
                "shape": list(fb.shape),
                "dtype": "<f4",
                "order": "C",
                "feature": {
                    "n_fft": cfg.n_fft,
                    "win_size": cfg.win_size,
                    "hop_size": cfg.hop_size,
                    "n_mels": cfg.n_mels,
                    "sample_rate_hz": cfg.sample_rate_hz,
                    "fmin_hz": cfg.fmin_hz,
                    "fmax_hz": cfg.fmax_hz,
                    "segment_samples": cfg.segment_samples,
                    "log_floor_eps": cfg.log_floor_eps,
                },
            },
            indent=2,
        )
        + "\n"
    )
    return bin_path, sidecar


# ---------------------------------------------------------------------------
# Mel spectrogram (torch core so the reconstruction loss is differentiable)

_MEL_CACHE: dict[FeatureConfig, tuple[torch.Tensor, torch.Tensor]] = {}


def _mel_tensors(cfg: FeatureConfig) -> tuple[torch.Tensor, torch.Tensor]:
    if cfg not in _MEL_CACHE:
        fb = torch.from_numpy(mel_filterbank(cfg))
        window = torch.hann_window(cfg.win_size, periodic=True, dtype=torch.float32)
        _MEL_CACHE[cfg] = (fb, window)
    return _MEL_CACHE[cfg]


def center_pad_amount(cfg: FeatureConfig) -> int:
    return (cfg.n_fft - cfg.hop_size) // 2


def mel_spectrogram_batch(wave: torch.Tensor, cfg: FeatureConfig) -> torch.Tensor:
    """Log-mel of a [B, T] waveform batch -> [B, n_mels, floor(T / hop)].

    Reflection center-padding of (n_fft - hop)/2 per side, Hann window,
    magnitude spectrum with a 1e-9 floor inside the sqrt (gradient safety),
    then ln(max(mel, log_floor_eps)).
    """
    if wave.dim() != 2:
        raise ValueError(f"expected [B, T] waveform batch, got shape {tuple(wave.shape)}")
    pad = center_pad_amount(cfg)
    n = wave.shape[1]
    if n < cfg.hop_size or n <= pad:
        raise ValueError(
            f"waveform of {n} samples is shorter than one analysis window "
            f"under center padding (needs > {max(pad, cfg.hop_size - 1)})"
        )
    fb, window = _mel_tensors(cfg)
    x = torch.nn.functional.pad(wave.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
    spec = torch.stft(
        x,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop_size,
        win_length=cfg.win_size,
        window=window,
        center=False,
        onesided=True,
        return_complex=True,
    )
    mag = torch.sqrt(spec.real.pow(2) + spec.imag.pow(2) + 1e-9)
    mel = torch.matmul(fb, mag)
    return torch.log(torch.clamp(mel, min=cfg.log_floor_eps))


def mel_spectrogram(clip: WaveformClip, cfg: FeatureConfig) -> MelSpectrogram:
    """Log-mel of one clip; n_frames = floor(len(samples) / hop_size)."""
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(
            f"clip rate {clip.sample_rate_hz} != feature rate {cfg.sample_rate_hz}"
        )
    wave = torch.from_numpy(np.ascontiguousarray(clip.samples, dtype=np.float32))
    with torch.no_grad():
        mel = mel_spectrogram_batch(wave.unsqueeze(0), cfg).squeeze(0)
    return MelSpectrogram(
        values=mel.numpy(),
        n_mels=cfg.n_mels,
        hop_size=cfg.hop_size,
        source_clip_id=clip.clip_id,
    )


# ---------------------------------------------------------------------------
# Segment sampling


def sample_segment(
    clip: WaveformClip,
    cfg: FeatureConfig,
    rng: np.random.Generator,
    pad_short: bool = False,
) -> tuple[WaveformClip, MelSpectrogram]:
    """Crop a hop-aligned segment of cfg.segment_samples plus its exact mel.

    Short clips are right-padded with zeros when ``pad_short`` is set
    (padded count reported on the returned clip), else rejected.
    """
    samples = clip.samples
    padded = 0
    if len(samples) < cfg.segment_samples:
        if not pad_short:
            raise ValueError(
                f"clip {clip.clip_id!r} has {len(samples)} samples < "
                f"segment_samples={cfg.segment_samples} (pad_short disabled)"
            )
        padded = cfg.segment_samples - len(samples)
        samples = np.concatenate([samples, np.zeros(padded, dtype=np.float32)])
    n_positions = (len(samples) - cfg.segment_samples) // cfg.hop_size + 1
    offset = int(rng.integers(0, n_positions)) * cfg.hop_size
    crop = WaveformClip(
        samples=samples[offset : offset + cfg.segment_samples],
        sample_rate_hz=clip.sample_rate_hz,
        clip_id=clip.clip_id,
        offset_samples=offset,
        padded_samples=padded,
    )
    return crop, mel_spectrogram(crop, cfg)
