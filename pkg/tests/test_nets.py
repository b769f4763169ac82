"""Shape contracts, determinism, taps, projections, gradient flow."""

import dataclasses
import math

import pytest
import torch

from vocl.config import (
    ConfigError,
    DiscriminatorBankConfig,
    GeneratorConfig,
    TrainConfig,
)
from vocl.losses import (
    adversarial_losses,
    compose_discriminator_loss,
    compose_generator_loss,
    feature_matching_loss,
    mel_mel_infonce,
    mel_reconstruction_loss,
    mel_wave_infonce_multi,
)
from vocl.nets import ProjectionHead, VocoderModel, parameter_count_report, project

from conftest import tiny_train_config

# pinned from the default desk config; any change must be intentional
EXPECTED_PARAM_REPORT = {
    "generator": 347937,
    "discriminators": 64644,
    "mel_head": 16512,
    "wave_heads": 16896,
    "total": 445989,
}


def small_model(seed=0, **overrides) -> tuple[VocoderModel, TrainConfig]:
    cfg = tiny_train_config(**overrides)
    torch.manual_seed(seed)
    return VocoderModel(cfg), cfg


def random_mel(batch, frames, n_mels=80, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(batch, n_mels, frames, generator=g)


# ---------------------------------------------------------------------------
# Generator


def test_generator_length_contract():
    model, _ = small_model()
    out = model.generator(random_mel(1, 32))
    assert out.shape == (1, 32 * 256)
    out = model.generator(random_mel(3, 17, seed=4))
    assert out.shape == (3, 17 * 256)


def test_generator_output_bounded():
    model, _ = small_model()
    out = model.generator(random_mel(2, 32, seed=1) * 4)
    assert torch.all(out > -1.0) and torch.all(out < 1.0)


def test_generator_batch_independence():
    model, _ = small_model(seed=3)
    mel = random_mel(2, 32, seed=2)
    joint = model.generator(mel)
    single0 = model.generator(mel[:1])
    single1 = model.generator(mel[1:])
    assert torch.max(torch.abs(joint[0] - single0[0])) < 1e-5
    assert torch.max(torch.abs(joint[1] - single1[0])) < 1e-5


def test_generator_determinism_eval():
    model, _ = small_model(seed=5)
    model.eval()
    mel = random_mel(1, 24, seed=9)
    with torch.no_grad():
        a = model.generator(mel)
        b = model.generator(mel)
    assert torch.equal(a, b)


def test_generator_hop_mismatch_is_construction_error():
    cfg = tiny_train_config()
    bad = dataclasses.replace(
        cfg,
        generator=dataclasses.replace(cfg.generator, upsample_rates=(8, 8, 2)),
    )
    with pytest.raises(ConfigError, match="upsample_rates"):
        VocoderModel(bad)


def test_generator_kernel_rate_compat_error():
    with pytest.raises(ConfigError, match="incompatible"):
        GeneratorConfig(upsample_rates=(8, 8, 4), upsample_kernel_sizes=(16, 16, 7)).validate()


# ---------------------------------------------------------------------------
# Mel encoder tap


def test_encode_mel_shape_and_determinism():
    model, cfg = small_model(seed=7)
    mel = random_mel(2, 32, seed=3)
    feats = model.generator.encode_mel(mel)
    # documented tap: stride 1, base_channels wide
    assert feats.shape == (2, cfg.generator.base_channels, 32)
    assert torch.equal(feats, model.generator.encode_mel(mel))


def test_encode_mel_sensitive_to_masking():
    model, _ = small_model(seed=8)
    mel = random_mel(1, 32, seed=4)
    masked = mel.clone()
    masked[:, :, 8:16] = math.log(1e-5)
    a = model.generator.encode_mel(mel)
    b = model.generator.encode_mel(masked)
    assert not torch.allclose(a, b)


# ---------------------------------------------------------------------------
# Discriminators and wave encoder tap


def test_discriminator_group_count():
    model, cfg = small_model()
    wave = torch.rand(2, 4096) * 2 - 1
    outputs = model.discriminators(wave)
    assert len(outputs) == len(cfg.discriminators.periods) + cfg.discriminators.n_scales
    for score, features in outputs:
        assert torch.all(torch.isfinite(score))
        assert len(features) == 4


def test_discriminator_batch_independence():
    model, _ = small_model(seed=11)
    wave = torch.rand(2, 4096, generator=torch.Generator().manual_seed(5)) * 2 - 1
    joint = model.discriminators(wave)
    single = model.discriminators(wave[:1])
    for (s_joint, _), (s_single, _) in zip(joint, single):
        assert torch.max(torch.abs(s_joint[0] - s_single[0])) < 1e-5


def test_encode_wave_matches_forward_features():
    model, _ = small_model(seed=12)
    wave = torch.rand(2, 4096, generator=torch.Generator().manual_seed(6)) * 2 - 1
    outputs = model.discriminators(wave)
    for d in range(len(model.discriminators)):
        tap = model.discriminators.encode_wave(wave, d)
        assert torch.equal(tap, outputs[d][1][-1])


def test_encode_wave_index_error():
    model, _ = small_model()
    wave = torch.zeros(1, 4096)
    with pytest.raises(IndexError, match="out of range"):
        model.discriminators.encode_wave(wave, 99)


def test_encode_wave_sensitive_to_input():
    model, _ = small_model(seed=13)
    g = torch.Generator().manual_seed(7)
    a = torch.rand(1, 4096, generator=g) * 2 - 1
    b = a.clone()
    b[:, 1000:1400] = 0.0
    assert not torch.allclose(
        model.discriminators.encode_wave(a, 0), model.discriminators.encode_wave(b, 0)
    )


# ---------------------------------------------------------------------------
# Projection heads


def test_project_constant_features_pooling_identity():
    head = ProjectionHead(6, 4)
    features = torch.randn(3, 6, 1).repeat(1, 1, 9)  # constant over time
    out = project(features, head, "mel", normalize=False)
    direct = head(features[:, :, 0])
    assert torch.allclose(out.vectors, direct, atol=1e-6)


def test_project_unit_norm_rows():
    head = ProjectionHead(6, 4)
    out = project(torch.randn(5, 6, 11), head, "mel")
    norms = out.vectors.norm(dim=1)
    assert torch.allclose(norms, torch.ones(5), atol=1e-5)
    assert out.normalized and out.modality == "mel"


def test_project_scale_invariance_zero_bias():
    head = ProjectionHead(6, 4)
    with torch.no_grad():
        head.linear.bias.zero_()
    x = torch.randn(4, 6, 3)
    a = project(x, head, "mel").vectors
    b = project(2 * x, head, "mel").vectors
    assert torch.allclose(a, b, atol=1e-6)


def test_project_dim_mismatch_error():
    head = ProjectionHead(6, 4)
    with pytest.raises(ValueError, match="input_dim"):
        project(torch.randn(2, 5, 3), head, "mel")


def test_project_handles_4d_period_features():
    head = ProjectionHead(8, 4)
    out = project(torch.randn(2, 8, 10, 3), head, "wave")
    assert out.vectors.shape == (2, 4)


# ---------------------------------------------------------------------------
# Parameter report + gradient flow


def test_parameter_count_report_regression():
    torch.manual_seed(0)
    assert parameter_count_report(VocoderModel(TrainConfig())) == EXPECTED_PARAM_REPORT
    torch.manual_seed(123)
    assert parameter_count_report(VocoderModel(TrainConfig())) == EXPECTED_PARAM_REPORT


def _loss_pair(model, cfg, mode):
    weights = dataclasses.replace(cfg.loss_weights, cl_mode=mode)
    ccfg = cfg.contrastive
    g = torch.Generator().manual_seed(21)
    mel = torch.randn(2, 80, cfg.feature.segment_frames, generator=g)
    wave = torch.rand(2, cfg.feature.segment_samples, generator=g) * 1.6 - 0.8

    fake = model.generator(mel)
    real_out = model.discriminators(wave)
    fake_out = model.discriminators(fake)
    l_adv_g, _ = adversarial_losses([s for s, _ in real_out], [s for s, _ in fake_out])
    l_fm = feature_matching_loss(
        [f for _, f in real_out], [f for _, f in fake_out]
    )
    l_mel = mel_reconstruction_loss(wave, fake, cfg.feature)
    mel_emb = project(model.generator.encode_mel(mel), model.mel_head, "mel")
    if mode == "mel_mel":
        masked = mel.clone()
        masked[:, :, 4:10] = math.log(1e-5)
        emb_masked = project(model.generator.encode_mel(masked), model.mel_head, "mel")
        l_cl_g = mel_mel_infonce(mel_emb, emb_masked, ccfg)
    else:
        wave_embs = [
            project(feats[-1].detach(), model.wave_heads[d], "wave")
            for d, (_, feats) in enumerate(real_out)
        ]
        l_cl_g = mel_wave_infonce_multi(mel_emb, [w.vectors.detach() for w in wave_embs], ccfg)
    l_g = compose_generator_loss(l_adv_g, l_fm, l_mel, l_cl_g, weights)

    real_out_d = model.discriminators(wave)
    fake_out_d = model.discriminators(fake.detach())
    _, l_adv_d = adversarial_losses(
        [s for s, _ in real_out_d], [s for s, _ in fake_out_d]
    )
    with torch.no_grad():
        mel_emb_det = project(model.generator.encode_mel(mel), model.mel_head, "mel")
    wave_embs_d = [
        project(feats[-1], model.wave_heads[d], "wave")
        for d, (_, feats) in enumerate(real_out_d)
    ]
    l_cl_d = mel_wave_infonce_multi(mel_emb_det, wave_embs_d, ccfg)
    l_d = compose_discriminator_loss(l_adv_d, l_cl_d, weights)
    return l_g, l_d


@pytest.mark.parametrize("mode", ["mel_mel", "mel_wave"])
def test_gradient_flow_generator_side(mode):
    model, cfg = small_model(seed=31)
    l_g, _ = _loss_pair(model, cfg, mode)
    params = list(model.generator.named_parameters()) + [
        (f"mel_head.{n}", p) for n, p in model.mel_head.named_parameters()
    ]
    grads = torch.autograd.grad(l_g, [p for _, p in params], allow_unused=True)
    for (name, _), grad in zip(params, grads):
        assert grad is not None, f"{name} got no gradient from the generator loss"
        assert torch.any(grad != 0), f"{name} gradient is identically zero"


def test_gradient_flow_discriminator_side():
    model, cfg = small_model(seed=32)
    _, l_d = _loss_pair(model, cfg, "mel_wave")
    params = list(model.discriminators.named_parameters()) + [
        (f"wave_heads.{n}", p) for n, p in model.wave_heads.named_parameters()
    ]
    grads = torch.autograd.grad(l_d, [p for _, p in params], allow_unused=True)
    for (name, _), grad in zip(params, grads):
        assert grad is not None, f"{name} got no gradient from the discriminator loss"
        assert torch.any(grad != 0), f"{name} gradient is identically zero"


def test_discriminator_bank_config_validation():
    with pytest.raises(ConfigError, match="distinct"):
        DiscriminatorBankConfig(periods=(2, 2)).validate()
    with pytest.raises(ConfigError, match="n_scales"):
        DiscriminatorBankConfig(n_scales=0).validate()


def test_embedding_dim_shared_across_heads():
    model, cfg = small_model()
    dims = {model.mel_head.latent_dim} | {h.latent_dim for h in model.wave_heads}
    assert dims == {cfg.contrastive.latent_dim}
