"""All loss terms and their weighted composition.

Two contrastive objectives over projection-head embeddings:

* masked mel <-> mel: each of the N original embeddings is an anchor, its
  masked view is the positive, and the candidate pool is all 2N embeddings
  minus the anchor itself (1 positive + 2(N-1) negatives);
* mel <-> waveform: anchor i matches its truly paired waveform embedding
  against all N waveform candidates, summed over every discriminator.

Similarities are temperature-scaled dot products exp(tau * v.w) with tau
multiplicative; softmax terms use log-sum-exp stabilization in float32.
Plus the inherited least-squares adversarial loss, feature matching, and
mel reconstruction, composed into the generator/discriminator totals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import ContrastiveConfig, FeatureConfig, LossWeights
from .audio_io import mel_spectrogram_batch
from .nets import EmbeddingBatch


def _vectors(emb) -> torch.Tensor:
    v = emb.vectors if isinstance(emb, EmbeddingBatch) else emb
    if v.dim() != 2:
        raise ValueError(f"expected [N, D] embeddings, got shape {tuple(v.shape)}")
    return v


def mel_mel_infonce(originals, masked, cfg: ContrastiveConfig) -> torch.Tensor:
    """InfoNCE over a batch of (original, masked) mel embedding pairs.

    Anchors are the N originals; candidates for anchor i are the other
    2N - 1 embeddings with masked[i] as the positive.
    """
    v = _vectors(originals)
    u = _vectors(masked)
    if v.shape != u.shape:
        raise ValueError(f"shape mismatch: originals {tuple(v.shape)} vs masked {tuple(u.shape)}")
    n = v.shape[0]
    if n < 2:
        raise ValueError(f"need N >= 2 for negatives, got N={n}")
    pool = torch.cat([v, u], dim=0)  # [2N, D]
    logits = cfg.tau * (v @ pool.t())  # [N, 2N]
    # exclude each anchor's own (unmasked) embedding from its candidate pool
    anchor_self = torch.eye(n, dtype=torch.bool, device=v.device)
    logits = logits.masked_fill(
        torch.cat([anchor_self, torch.zeros_like(anchor_self)], dim=1), float("-inf")
    )
    positive = logits[torch.arange(n), torch.arange(n) + n]
    return (torch.logsumexp(logits, dim=1) - positive).mean()


def mel_wave_infonce(mel_emb, wave_emb, cfg: ContrastiveConfig) -> torch.Tensor:
    """Cross-modal InfoNCE: mel anchor i against all N waveform embeddings.

    The true pair sits on the diagonal. By default the positive stays in
    the denominator (standard InfoNCE / CLIP convention); setting
    ``include_positive_in_denominator=False`` gives the literal variant
    whose denominator sums only over the N - 1 mismatched pairs.
    """
    v = _vectors(mel_emb)
    w = _vectors(wave_emb)
    if v.shape != w.shape:
        raise ValueError(f"shape mismatch: mel {tuple(v.shape)} vs wave {tuple(w.shape)}")
    n = v.shape[0]
    if n < 2:
        raise ValueError(f"need N >= 2 for negatives, got N={n}")

    def one_direction(anchors: torch.Tensor, candidates: torch.Tensor) -> torch.Tensor:
        logits = cfg.tau * (anchors @ candidates.t())  # [N, N]
        positive = logits.diagonal()
        if not cfg.include_positive_in_denominator:
            logits = logits.masked_fill(
                torch.eye(n, dtype=torch.bool, device=logits.device), float("-inf")
            )
        return (torch.logsumexp(logits, dim=1) - positive).mean()

    loss = one_direction(v, w)
    if cfg.symmetric_cross_modal:
        loss = 0.5 * (loss + one_direction(w, v))
    return loss


def mel_wave_infonce_multi(mel_emb, wave_embs, cfg: ContrastiveConfig) -> torch.Tensor:
    """Sum of the cross-modal loss against each discriminator's embeddings."""
    if len(wave_embs) == 0:
        raise ValueError("need at least one waveform embedding batch")
    total = None
    for w in wave_embs:
        term = mel_wave_infonce(mel_emb, w, cfg)
        total = term if total is None else total + term
    return total


def adversarial_losses(real_scores, fake_scores) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares GAN terms summed over the discriminator bank.

    Returns (l_adv_g, l_adv_d) where
    l_adv_d = sum_d mean((real_d - 1)^2) + mean(fake_d^2) and
    l_adv_g = sum_d mean((fake_d - 1)^2).
    """
    if len(real_scores) == 0 or len(real_scores) != len(fake_scores):
        raise ValueError(
            f"score lists must be equal-length and non-empty, got "
            f"{len(real_scores)} real / {len(fake_scores)} fake"
        )
    l_adv_g = l_adv_d = None
    for real, fake in zip(real_scores, fake_scores):
        g = ((fake - 1.0) ** 2).mean()
        d = ((real - 1.0) ** 2).mean() + (fake**2).mean()
        l_adv_g = g if l_adv_g is None else l_adv_g + g
        l_adv_d = d if l_adv_d is None else l_adv_d + d
    return l_adv_g, l_adv_d


def feature_matching_loss(real_features, fake_features) -> torch.Tensor:
    """Mean absolute feature difference, summed over layers and discriminators."""
    if len(real_features) == 0 or len(real_features) != len(fake_features):
        raise ValueError("feature lists must be equal-length and non-empty")
    total = None
    for real_layers, fake_layers in zip(real_features, fake_features):
        for r, f in zip(real_layers, fake_layers):
            term = (r - f).abs().mean()
            total = term if total is None else total + term
    return total


def mel_reconstruction_loss(
    real_wave: torch.Tensor, fake_wave: torch.Tensor, cfg: FeatureConfig
) -> torch.Tensor:
    """L1 distance between the log-mels of real and generated waveforms."""
    real_mel = mel_spectrogram_batch(real_wave, cfg)
    fake_mel = mel_spectrogram_batch(fake_wave, cfg)
    return (real_mel - fake_mel).abs().mean()


@dataclass
class LossBreakdown:
    """All scalar loss terms for one training step (logged at 64-bit).

    ``l_cl`` is the generator-phase contrastive value entering L_G;
    ``l_cl_d`` the discriminator-phase value entering L_D (0 unless the
    cross-modal task is active, per the indicator in the composition).
    """

    l_adv_g: float = 0.0
    l_adv_d: float = 0.0
    l_fm: float = 0.0
    l_mel: float = 0.0
    l_cl: float = 0.0
    l_cl_d: float = 0.0
    l_g_total: float = 0.0
    l_d_total: float = 0.0
    per_disc_l_cl: tuple[float, ...] = field(default_factory=tuple)


def compose_generator_loss(l_adv_g, l_fm, l_mel, l_cl, weights: LossWeights):
    """Generator total: adversarial + weighted fm/mel terms + gated contrastive."""
    total = l_adv_g + weights.lambda_fm * l_fm + weights.lambda_mel * l_mel
    if weights.cl_mode != "none":
        total = total + weights.lambda_cl * l_cl
    return total


def compose_discriminator_loss(l_adv_d, l_cl, weights: LossWeights):
    """Discriminator total: adversarial, plus the contrastive term only when
    the cross-modal task trains the discriminator side."""
    if weights.i_disc:
        return l_adv_d + weights.effective_lambda_cl_d * l_cl
    return l_adv_d
