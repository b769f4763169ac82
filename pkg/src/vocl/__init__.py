"""Desk-scale GAN vocoder training with auxiliary contrastive objectives."""

__version__ = "0.1.0"

from .config import (
    ContrastiveConfig,
    DiscriminatorBankConfig,
    FeatureConfig,
    GeneratorConfig,
    LossWeights,
    MaskSpec,
    TrainConfig,
    resolve_config,
)
from .audio_io import (
    AudioCorpus,
    MelSpectrogram,
    SplitSpec,
    WaveformClip,
    load_corpus,
    mel_spectrogram,
    sample_segment,
    select_subset,
)
from .losses import LossBreakdown

__all__ = [
    "AudioCorpus",
    "ContrastiveConfig",
    "DiscriminatorBankConfig",
    "FeatureConfig",
    "GeneratorConfig",
    "LossBreakdown",
    "LossWeights",
    "MaskSpec",
    "MelSpectrogram",
    "SplitSpec",
    "TrainConfig",
    "WaveformClip",
    "load_corpus",
    "mel_spectrogram",
    "resolve_config",
    "sample_segment",
    "select_subset",
    "__version__",
]
