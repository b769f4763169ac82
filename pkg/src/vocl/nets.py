"""Generator, multi-discriminator bank, and contrastive projection heads.

Desk-scale members of the HiFi-GAN architecture family: a transposed-conv
upsampling generator with multi-receptive-field residual blocks, plus a
bank of period and scale discriminators. The mel encoder is the
generator's input convolution (pre-upsampling, mel-rate features); the
wave encoder of each sub-discriminator is its penultimate feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DiscriminatorBankConfig, GeneratorConfig, TrainConfig

LRELU_SLOPE = 0.1


def _init_conv_weights(module: nn.Module, std: float = 0.01) -> None:
    if isinstance(module, (nn.Conv1d, nn.Conv2d, nn.ConvTranspose1d)):
        module.weight.data.normal_(0.0, std)
        if module.bias is not None:
            module.bias.data.zero_()


def _get_padding(kernel_size: int, dilation: int = 1) -> int:
    return (kernel_size * dilation - dilation) // 2


class ResBlock(nn.Module):
    """Stack of dilated convolutions, each with its own residual connection."""

    def __init__(self, channels: int, kernel_size: int, dilations: tuple[int, ...]):
        super().__init__()
        self.convs = nn.ModuleList(
            [
                nn.Conv1d(
                    channels,
                    channels,
                    kernel_size,
                    dilation=d,
                    padding=_get_padding(kernel_size, d),
                )
                for d in dilations
            ]
        )

    def forward(self, x):
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LRELU_SLOPE))
        return x


class Generator(nn.Module):
    """Mel-spectrogram [B, n_mels, T] -> waveform [B, T * hop] in (-1, 1)."""

    def __init__(self, cfg: GeneratorConfig, n_mels: int = 80):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.total_upsample = 1
        for r in cfg.upsample_rates:
            self.total_upsample *= r
        self.num_kernels = len(cfg.resblock_kernel_sizes)

        self.conv_pre = nn.Conv1d(n_mels, cfg.base_channels, 7, padding=3)
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = cfg.base_channels
        for r, k in zip(cfg.upsample_rates, cfg.upsample_kernel_sizes):
            self.ups.append(
                nn.ConvTranspose1d(ch, ch // 2, k, stride=r, padding=(k - r) // 2)
            )
            ch //= 2
            for kernel, dil in zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations):
                self.resblocks.append(ResBlock(ch, kernel, tuple(dil)))
        self.conv_post = nn.Conv1d(ch, 1, 7, padding=3)
        self.apply(_init_conv_weights)

    def encode_mel(self, mel: torch.Tensor) -> torch.Tensor:
        """Backbone feature tap: input conv output, mel-rate (stride 1)."""
        return self.conv_pre(mel)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = self.encode_mel(mel)
        for i, up in enumerate(self.ups):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            acc = None
            for j in range(self.num_kernels):
                h = self.resblocks[i * self.num_kernels + j](x)
                acc = h if acc is None else acc + h
            x = acc / self.num_kernels
        x = torch.tanh(self.conv_post(F.leaky_relu(x, LRELU_SLOPE)))
        return x.squeeze(1)


class PeriodDiscriminator(nn.Module):
    """2-D convolutions over the waveform folded at a fixed period."""

    def __init__(self, period: int, channels: int):
        super().__init__()
        self.period = period
        c = channels
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(1, c, (5, 1), (3, 1), padding=(2, 0)),
                nn.Conv2d(c, c, (5, 1), (3, 1), padding=(2, 0)),
                nn.Conv2d(c, c, (5, 1), (3, 1), padding=(2, 0)),
                nn.Conv2d(c, c, (5, 1), 1, padding=(2, 0)),
            ]
        )
        self.conv_post = nn.Conv2d(c, 1, (3, 1), 1, padding=(1, 0))
        self.apply(_init_conv_weights)

    def forward(self, x: torch.Tensor):
        b, t = x.shape
        if t % self.period:
            pad = self.period - t % self.period
            x = F.pad(x, (0, pad), "reflect")
            t = x.shape[-1]
        x = x.view(b, 1, t // self.period, self.period)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        score = self.conv_post(x)
        return score.flatten(1), features


class ScaleDiscriminator(nn.Module):
    """1-D convolutions over the raw (or average-pooled) waveform."""

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        groups = max(1, min(4, c // 4))
        self.convs = nn.ModuleList(
            [
                nn.Conv1d(1, c, 15, 1, padding=7),
                nn.Conv1d(c, c, 21, 4, padding=10, groups=groups),
                nn.Conv1d(c, c, 21, 4, padding=10, groups=groups),
                nn.Conv1d(c, c, 5, 1, padding=2),
            ]
        )
        self.conv_post = nn.Conv1d(c, 1, 3, 1, padding=1)
        self.apply(_init_conv_weights)

    def forward(self, x: torch.Tensor):
        x = x.unsqueeze(1)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        score = self.conv_post(x)
        return score.flatten(1), features


class DiscriminatorBank(nn.Module):
    """All period discriminators followed by all scale discriminators.

    Scale discriminator d sees the input average-pooled d times (x2 each).
    """

    def __init__(self, cfg: DiscriminatorBankConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.periods = nn.ModuleList(
            [PeriodDiscriminator(p, cfg.channels) for p in cfg.periods]
        )
        self.scales = nn.ModuleList(
            [ScaleDiscriminator(cfg.channels) for _ in range(cfg.n_scales)]
        )
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def __len__(self) -> int:
        return len(self.periods) + len(self.scales)

    def forward(self, wave: torch.Tensor):
        """[B, T] -> list of (score map, feature list) per sub-discriminator."""
        outputs = [d(wave) for d in self.periods]
        x = wave
        for i, d in enumerate(self.scales):
            if i > 0:
                x = self.pool(x.unsqueeze(1)).squeeze(1)
            outputs.append(d(x))
        return outputs

    def encode_wave(self, wave: torch.Tensor, index: int) -> torch.Tensor:
        """Penultimate feature map of one sub-discriminator."""
        if not 0 <= index < len(self):
            raise IndexError(f"discriminator index {index} out of range [0, {len(self)})")
        if index < len(self.periods):
            _, features = self.periods[index](wave)
            return features[-1]
        x = wave
        for i in range(index - len(self.periods)):
            x = self.pool(x.unsqueeze(1)).squeeze(1)
        _, features = self.scales[index - len(self.periods)](x)
        return features[-1]


@dataclass
class EmbeddingBatch:
    """N x D latent vectors from a projection head."""

    vectors: torch.Tensor
    modality: str  # "mel" or "wave"
    normalized: bool


class ProjectionHead(nn.Module):
    """Single affine map from pooled backbone features into R^D."""

    def __init__(self, input_dim: int, latent_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.linear = nn.Linear(input_dim, latent_dim)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.linear(pooled)


def project(
    features: torch.Tensor,
    head: ProjectionHead,
    modality: str,
    normalize: bool = True,
) -> EmbeddingBatch:
    """Mean-pool features over all non-channel axes, project, L2-normalize.

    Accepts [B, C, ...] feature maps; channel dim must match head.input_dim.
    """
    if features.dim() < 2:
        raise ValueError(f"expected [B, C, ...] features, got shape {tuple(features.shape)}")
    if features.shape[1] != head.input_dim:
        raise ValueError(
            f"feature channels {features.shape[1]} != head input_dim {head.input_dim}"
        )
    pooled = features.flatten(2).mean(dim=2) if features.dim() > 2 else features
    vectors = head(pooled)
    if normalize:
        vectors = F.normalize(vectors, p=2, dim=1, eps=1e-12)
    return EmbeddingBatch(vectors=vectors, modality=modality, normalized=normalize)


class VocoderModel(nn.Module):
    """Generator + discriminator bank + all projection heads for one run."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        cfg.generator.validate(hop_size=cfg.feature.hop_size)
        self.generator = Generator(cfg.generator, n_mels=cfg.feature.n_mels)
        self.discriminators = DiscriminatorBank(cfg.discriminators)
        d = cfg.contrastive.latent_dim
        self.mel_head = ProjectionHead(cfg.generator.base_channels, d)
        self.wave_heads = nn.ModuleList(
            [
                ProjectionHead(cfg.discriminators.channels, d)
                for _ in range(len(self.discriminators))
            ]
        )

    def generator_parameters(self):
        """Parameters updated by the generator-phase optimizer."""
        yield from self.generator.parameters()
        yield from self.mel_head.parameters()

    def discriminator_parameters(self):
        """Parameters updated by the discriminator-phase optimizer."""
        yield from self.discriminators.parameters()
        yield from self.wave_heads.parameters()


def parameter_count_report(model: VocoderModel) -> dict[str, int]:
    """Deterministic parameter counts per component (regression fixture)."""
    report = {
        "generator": sum(p.numel() for p in model.generator.parameters()),
        "discriminators": sum(p.numel() for p in model.discriminators.parameters()),
        "mel_head": sum(p.numel() for p in model.mel_head.parameters()),
        "wave_heads": sum(p.numel() for p in model.wave_heads.parameters()),
    }
    report["total"] = sum(report.values())
    return report
