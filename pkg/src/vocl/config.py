"""Run configuration: dataclasses, validation, file loading and overrides.

A run is described by a single TOML or JSON document whose sections map
onto the dataclasses below. ``resolve_config`` applies defaults, dotted
``--set`` overrides, and validates every invariant before anything runs.
The resolved snapshot (JSON) is authoritative for provenance.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """A config document violates an invariant; message names the field."""


CL_MODES = ("none", "mel_mel", "mel_wave")
MASK_FILLS = ("log_floor", "band_mean")


@dataclass(frozen=True)
class FeatureConfig:
    """Waveform <-> mel-spectrogram front end parameters.

    Mels are natural-log magnitude: ln(max(filterbank @ |STFT|, log_floor_eps)),
    Hann window, reflection center-padding of (n_fft - hop_size) / 2 per side.
    """

    n_fft: int = 1024
    win_size: int = 1024
    hop_size: int = 256
    n_mels: int = 80
    sample_rate_hz: int = 22050
    fmin_hz: float = 0.0
    fmax_hz: float = 11025.0
    segment_samples: int = 8192
    log_floor_eps: float = 1e-5

    def validate(self) -> None:
        if not (self.n_fft >= self.win_size >= self.hop_size > 0):
            raise ConfigError(
                f"feature: need n_fft >= win_size >= hop_size > 0, got "
                f"({self.n_fft}, {self.win_size}, {self.hop_size})"
            )
        if self.segment_samples <= 0 or self.segment_samples % self.hop_size != 0:
            raise ConfigError(
                f"feature.segment_samples={self.segment_samples} must be a "
                f"positive multiple of hop_size={self.hop_size}"
            )
        if self.n_mels <= 0:
            raise ConfigError(f"feature.n_mels={self.n_mels} must be positive")
        if not (0.0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ConfigError(
                f"feature: need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin_hz}, fmax={self.fmax_hz}, sr={self.sample_rate_hz}"
            )
        if self.log_floor_eps <= 0:
            raise ConfigError("feature.log_floor_eps must be positive")

    @property
    def segment_frames(self) -> int:
        return self.segment_samples // self.hop_size


@dataclass(frozen=True)
class MaskSpec:
    """Time/frequency interval masking parameters for the mel views."""

    n_time_masks: int = 2
    max_time_width: int = 0  # 0 -> ceil(n_frames / 8), resolved per input
    n_freq_masks: int = 2
    max_freq_width: int = 10
    fill: str = "log_floor"

    def validate(self) -> None:
        if self.n_time_masks < 0 or self.n_freq_masks < 0:
            raise ConfigError("mask_spec: mask counts must be >= 0")
        if self.max_time_width < 0 or self.max_freq_width < 1:
            raise ConfigError(
                "mask_spec: max_time_width must be >= 0 (0 = auto) and "
                "max_freq_width >= 1"
            )
        if self.fill not in MASK_FILLS:
            raise ConfigError(
                f"mask_spec.fill={self.fill!r} not one of {MASK_FILLS}"
            )


@dataclass(frozen=True)
class GeneratorConfig:
    """Mel-to-waveform generator sizes (desk-scale HiFi-GAN-family)."""

    upsample_rates: tuple[int, ...] = (8, 8, 4)
    upsample_kernel_sizes: tuple[int, ...] = (16, 16, 8)
    base_channels: int = 128
    resblock_kernel_sizes: tuple[int, ...] = (3, 7)
    resblock_dilations: tuple[tuple[int, ...], ...] = ((1, 3), (1, 3))

    def validate(self, hop_size: int | None = None) -> None:
        if len(self.upsample_rates) != len(self.upsample_kernel_sizes):
            raise ConfigError(
                "generator: upsample_rates and upsample_kernel_sizes lengths differ"
            )
        for r, k in zip(self.upsample_rates, self.upsample_kernel_sizes):
            if r < 1 or k < r or (k - r) % 2 != 0:
                raise ConfigError(
                    f"generator: upsample kernel {k} incompatible with rate {r} "
                    "(need k >= r and k - r even for exact length)"
                )
        if self.base_channels < 2 ** len(self.upsample_rates):
            raise ConfigError(
                f"generator.base_channels={self.base_channels} too small for "
                f"{len(self.upsample_rates)} halving upsample stages"
            )
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilations):
            raise ConfigError(
                "generator: resblock_kernel_sizes and resblock_dilations lengths differ"
            )
        if hop_size is not None and math.prod(self.upsample_rates) != hop_size:
            raise ConfigError(
                f"generator: product(upsample_rates)={math.prod(self.upsample_rates)} "
                f"must equal hop_size={hop_size}"
            )


@dataclass(frozen=True)
class DiscriminatorBankConfig:
    """Period/scale discriminator bank sizes."""

    periods: tuple[int, ...] = (2, 3)
    n_scales: int = 2
    channels: int = 32

    def validate(self) -> None:
        if len(set(self.periods)) != len(self.periods) or any(
            p < 1 for p in self.periods
        ):
            raise ConfigError("discriminators.periods must be distinct integers >= 1")
        if self.n_scales < 1:
            raise ConfigError("discriminators.n_scales must be >= 1")
        if self.channels < 1:
            raise ConfigError("discriminators.channels must be >= 1")

    @property
    def n_discriminators(self) -> int:
        return len(self.periods) + self.n_scales


@dataclass(frozen=True)
class ContrastiveConfig:
    """Shared latent space and temperature for both contrastive losses.

    tau is multiplicative (exp(tau * v.w), inverse-temperature convention).
    """

    tau: float = 5.0
    latent_dim: int = 128
    symmetric_cross_modal: bool = False
    include_positive_in_denominator: bool = True

    def validate(self) -> None:
        if not math.isfinite(self.tau) or self.tau <= 0:
            raise ConfigError(f"contrastive.tau={self.tau} must be finite and > 0")
        if self.latent_dim < 1:
            raise ConfigError("contrastive.latent_dim must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    """Loss-term weights and the contrastive-task mode.

    The indicator-gated discriminator term reuses lambda_cl unless
    lambda_cl_d overrides it.
    """

    lambda_fm: float = 2.0
    lambda_mel: float = 45.0
    lambda_cl: float = 1.0
    lambda_cl_d: float | None = None
    cl_mode: str = "none"

    @property
    def i_disc(self) -> bool:
        """Whether the contrastive term also enters the discriminator loss."""
        return self.cl_mode == "mel_wave"

    @property
    def effective_lambda_cl_d(self) -> float:
        return self.lambda_cl if self.lambda_cl_d is None else self.lambda_cl_d

    def validate(self) -> None:
        if self.cl_mode not in CL_MODES:
            raise ConfigError(f"loss_weights.cl_mode={self.cl_mode!r} not one of {CL_MODES}")
        for name in ("lambda_fm", "lambda_mel", "lambda_cl"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"loss_weights.{name}={v} must be finite and >= 0")
        if self.lambda_cl_d is not None and (
            not math.isfinite(self.lambda_cl_d) or self.lambda_cl_d < 0
        ):
            raise ConfigError(
                f"loss_weights.lambda_cl_d={self.lambda_cl_d} must be finite and >= 0"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Full training-run description."""

    batch_size: int = 16
    learning_rate: float = 2e-4
    adam_beta1: float = 0.8
    adam_beta2: float = 0.99
    weight_decay: float = 0.01
    lr_decay_per_epoch: float = 0.999
    total_steps: int = 20000
    data_fraction: float = 1.0
    seed: int = 1234
    checkpoint_every: int = 5000
    validate_every: int = 5000
    pad_short_clips: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    mask_spec: MaskSpec = field(default_factory=MaskSpec)
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminators: DiscriminatorBankConfig = field(
        default_factory=DiscriminatorBankConfig
    )

    def validate(self) -> None:
        self.feature.validate()
        self.mask_spec.validate()
        self.generator.validate(hop_size=self.feature.hop_size)
        self.discriminators.validate()
        self.contrastive.validate()
        self.loss_weights.validate()
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss_weights.cl_mode != "none" and self.batch_size < 2:
            raise ConfigError(
                f"batch_size={self.batch_size} too small: contrastive mode "
                f"{self.loss_weights.cl_mode!r} needs at least 2 samples for negatives"
            )
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ConfigError(f"data_fraction={self.data_fraction} must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0.0 < self.lr_decay_per_epoch <= 1.0):
            raise ConfigError("lr_decay_per_epoch must be in (0, 1]")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.checkpoint_every < 0 or self.validate_every < 0:
            raise ConfigError("checkpoint_every/validate_every must be >= 0 (0 disables)")


_TUPLE_OF_TUPLES = ("resblock_dilations",)


def _build(cls, data: dict[str, Any]):
    """Construct a (possibly nested) config dataclass from plain dicts."""
    kwargs: dict[str, Any] = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value)
        elif isinstance(value, list):
            if key in _TUPLE_OF_TUPLES:
                kwargs[key] = tuple(tuple(v) for v in value)
            else:
                kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    "loss_weights": LossWeights,
    "contrastive": ContrastiveConfig,
    "mask_spec": MaskSpec,
    "feature": FeatureConfig,
    "generator": GeneratorConfig,
    "discriminators": DiscriminatorBankConfig,
}


def config_from_dict(data: dict[str, Any]) -> TrainConfig:
    return _build(TrainConfig, data)


def config_to_dict(cfg: TrainConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a TOML or JSON run config into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply dotted-path ``key.sub=value`` overrides onto a config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-section")
        node[keys[-1]] = _parse_override_value(raw.strip())
    return data


def resolve_config(
    path: str | Path | None = None, overrides: list[str] | None = None
) -> TrainConfig:
    """Load + override + validate; returns the authoritative TrainConfig."""
    data = load_config_file(path) if path is not None else {}
    if overrides:
        apply_overrides(data, overrides)
    cfg = config_from_dict(data)
    cfg.validate()
    return cfg


def dump_resolved(cfg: TrainConfig, path: str | Path) -> None:
    """Write the resolved config snapshot as pretty JSON."""
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
