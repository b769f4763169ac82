"""Shared fixtures: synthetic LJSpeech-format corpora and small configs."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for `oracles`

from vocl.audio_io import write_wav
from vocl.config import (
    DiscriminatorBankConfig,
    FeatureConfig,
    GeneratorConfig,
    TrainConfig,
)

SR = 22050


def synth_clip(index: int, duration_s: float = 1.0, sr: int = SR) -> np.ndarray:
    """Deterministic, mutually distinguishable clip: harmonic stack + noise."""
    rng = np.random.default_rng(1000 + index)
    t = np.arange(int(duration_s * sr)) / sr
    base = 110.0 * (1.0 + 0.37 * index)
    x = np.zeros_like(t)
    for k, gain in enumerate((0.5, 0.3, 0.15)):
        x += gain * np.sin(2 * np.pi * base * (k + 1) * t + rng.uniform(0, np.pi))
    x += 0.05 * rng.standard_normal(len(t))
    x *= 0.5 / max(1e-9, np.max(np.abs(x)))
    return x.astype(np.float32)


def build_corpus(
    root: Path,
    n_clips: int,
    n_validation: int = 0,
    duration_s: float = 1.0,
    sr: int = SR,
) -> Path:
    """Write an LJSpeech-format corpus; last n_validation ids go in the split file."""
    root.mkdir(parents=True, exist_ok=True)
    wavs = root / "wavs"
    wavs.mkdir(exist_ok=True)
    ids = [f"clip{i:04d}" for i in range(n_clips)]
    lines = []
    for i, clip_id in enumerate(ids):
        write_wav(wavs / f"{clip_id}.wav", synth_clip(i, duration_s, sr), sr)
        lines.append(f"{clip_id}|some text {i}|some text {i}")
    (root / "metadata.csv").write_text("\n".join(lines) + "\n")
    if n_validation:
        (root / "validation.txt").write_text(
            "".join(cid + "\n" for cid in ids[-n_validation:])
        )
    return root


def tiny_train_config(**overrides) -> TrainConfig:
    """Small-architecture config for fast machinery tests (not desk scale)."""
    base = dict(
        batch_size=2,
        total_steps=10,
        checkpoint_every=0,
        validate_every=0,
        seed=77,
        generator=GeneratorConfig(
            upsample_rates=(8, 8, 4),
            upsample_kernel_sizes=(16, 16, 8),
            base_channels=32,
            resblock_kernel_sizes=(3,),
            resblock_dilations=((1, 3),),
        ),
        discriminators=DiscriminatorBankConfig(periods=(2, 3), n_scales=1, channels=8),
        feature=FeatureConfig(segment_samples=4096),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def corpus_10(tmp_path_factory) -> Path:
    """10 clips, 8 train / 2 validation via split file."""
    return build_corpus(tmp_path_factory.mktemp("corpus10"), 10, n_validation=2)


@pytest.fixture(scope="session")
def corpus_4(tmp_path_factory) -> Path:
    """4 training clips, no validation file (split handled per test)."""
    root = build_corpus(tmp_path_factory.mktemp("corpus4"), 6, n_validation=2)
    return root
