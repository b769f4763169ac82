"""Alternating discriminator/generator training with auxiliary contrastive tasks.

Per-step routing of the contrastive gradients keeps each phase on its own
objective: the discriminator phase sees the cross-modal term with the
mel side detached (waveform encoders + heads learn), the generator phase
sees its contrastive term with the wave side detached (mel encoder + head
learn; both views flow in masked-mel mode). Discriminator update first,
generator update second, one step counter increment.

All randomness is derived from (seed, purpose, step/epoch), so a run is
reproducible from the seed alone and resuming from a checkpoint replays
the exact single-threaded (clip_id, offset) sequence.
"""

from __future__ import annotations

import csv
import json
import math
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np
import torch

from . import evaluation
from .audio_io import (
    AudioCorpus,
    CorpusEntry,
    WaveformClip,
    load_clip,
    mel_spectrogram,
    sample_segment,
    select_subset,
)
from .augment import mask_mel_array
from .config import ConfigError, TrainConfig, config_to_dict
from .losses import (
    LossBreakdown,
    adversarial_losses,
    compose_discriminator_loss,
    compose_generator_loss,
    feature_matching_loss,
    mel_mel_infonce,
    mel_reconstruction_loss,
    mel_wave_infonce,
)
from .nets import VocoderModel, project

METRICS_COLUMNS = (
    "row_type",
    "step",
    "l_adv_g",
    "l_adv_d",
    "l_fm",
    "l_mel",
    "l_cl",
    "l_cl_d",
    "l_g_total",
    "l_d_total",
    "lr",
    "wallclock_s",
    "val_mae",
    "val_mcd",
)

CHECKPOINT_FORMAT = 1


class NonFiniteLossError(RuntimeError):
    """A loss term went non-finite; carries the offending term and values."""

    def __init__(self, term: str, step: int, values: dict[str, float]):
        super().__init__(
            f"non-finite loss term {term!r} at step {step}: {values.get(term)!r}"
        )
        self.term = term
        self.step = step
        self.values = values


class CheckpointError(RuntimeError):
    """Checkpoint unreadable or incompatible with the requested config."""


def rng_stream(seed: int, purpose: str, index: int) -> np.random.Generator:
    """Independent, reproducible generator for one (purpose, index) slot."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(purpose.encode()), index])
    )


@dataclass
class TrainState:
    """Everything mutated by training; config itself stays read-only."""

    model: VocoderModel
    g_opt: torch.optim.AdamW
    d_opt: torch.optim.AdamW
    seed: int
    step: int = 0
    best_validation: dict | None = None


def build_state(cfg: TrainConfig) -> TrainState:
    """Seeded model + optimizer construction (deterministic per config/seed)."""
    torch.manual_seed(cfg.seed)
    model = VocoderModel(cfg)
    g_opt = torch.optim.AdamW(
        model.generator_parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    d_opt = torch.optim.AdamW(
        model.discriminator_parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    return TrainState(model=model, g_opt=g_opt, d_opt=d_opt, seed=cfg.seed)


# ---------------------------------------------------------------------------
# Batch plan: pure functions of (seed, step)


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return max(1, n_train // batch_size)


def batch_entries_for_step(
    corpus: AudioCorpus, cfg: TrainConfig, step: int
) -> list[CorpusEntry]:
    """Which clips make up the batch at ``step`` (epoch-shuffled, drop-last)."""
    n = corpus.n_train
    spe = steps_per_epoch(n, cfg.batch_size)
    epoch, pos = divmod(step, spe)
    perm = rng_stream(cfg.seed, "shuffle", epoch).permutation(n)
    idx = perm[pos * cfg.batch_size : pos * cfg.batch_size + cfg.batch_size]
    return [corpus.train[i] for i in idx]


def assemble_batch(
    entries: list[CorpusEntry],
    cfg: TrainConfig,
    step: int,
    cache: dict[str, WaveformClip],
    sample_rate: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load clips (cached) and crop aligned (mel, wave) segment pairs."""
    rng = rng_stream(cfg.seed, "segment", step)
    batch = []
    for entry in entries:
        clip = cache.get(entry.clip_id)
        if clip is None:
            clip = load_clip(entry, sample_rate)
            if len(cache) >= 512:
                cache.pop(next(iter(cache)))
            cache[entry.clip_id] = clip
        crop, mel = sample_segment(clip, cfg.feature, rng, pad_short=cfg.pad_short_clips)
        batch.append((mel.values, crop.samples, entry.clip_id, crop.offset_samples))
    return batch


# ---------------------------------------------------------------------------
# One optimization step


def _check_finite(values: dict[str, float], step: int) -> None:
    for term, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(term, step, values)


def train_step(
    state: TrainState, batch: list[tuple], cfg: TrainConfig, phase_hook=None
) -> tuple[TrainState, LossBreakdown]:
    """Discriminator update then generator update on one aligned batch.

    ``batch`` items are (mel values [n_mels, F], wave samples [F * hop])
    pairs, waveform i truly paired with mel i; extra tuple elements
    (clip_id, offset) are ignored here. ``phase_hook(name, state)`` fires
    after each optimizer update ("d_done", "g_done") for instrumentation.
    """
    if len(batch) != cfg.batch_size:
        raise ValueError(f"batch size {len(batch)} != configured {cfg.batch_size}")
    weights = cfg.loss_weights
    ccfg = cfg.contrastive
    model = state.model

    mel = torch.from_numpy(np.stack([item[0] for item in batch])).float()
    wave = torch.from_numpy(np.stack([item[1] for item in batch])).float()

    fake = model.generator(mel)

    # -- discriminator phase -------------------------------------------------
    state.d_opt.zero_grad(set_to_none=True)
    real_out = model.discriminators(wave)
    fake_out = model.discriminators(fake.detach())
    _, l_adv_d = adversarial_losses(
        [score for score, _ in real_out], [score for score, _ in fake_out]
    )
    per_disc_cl: tuple[float, ...] = ()
    l_cl_d_t = None
    if weights.cl_mode == "mel_wave":
        with torch.no_grad():
            mel_emb_detached = project(
                model.generator.encode_mel(mel), model.mel_head, "mel"
            )
        wave_embs = [
            project(features[-1], model.wave_heads[d], "wave")
            for d, (_, features) in enumerate(real_out)
        ]
        per_disc_terms = [
            mel_wave_infonce(mel_emb_detached, w, ccfg) for w in wave_embs
        ]
        l_cl_d_t = sum(per_disc_terms[1:], per_disc_terms[0])
        per_disc_cl = tuple(float(t.detach().item()) for t in per_disc_terms)
    l_d_total = compose_discriminator_loss(
        l_adv_d, l_cl_d_t if l_cl_d_t is not None else 0.0, weights
    )
    l_d_total.backward()
    state.d_opt.step()
    if phase_hook is not None:
        phase_hook("d_done", state)

    # -- generator phase -----------------------------------------------------
    state.g_opt.zero_grad(set_to_none=True)
    real_out2 = model.discriminators(wave)
    fake_out2 = model.discriminators(fake)
    l_adv_g, _ = adversarial_losses(
        [score for score, _ in real_out2], [score for score, _ in fake_out2]
    )
    l_fm = feature_matching_loss(
        [features for _, features in real_out2],
        [features for _, features in fake_out2],
    )
    l_mel = mel_reconstruction_loss(wave, fake, cfg.feature)
    l_cl_g_t = None
    if weights.cl_mode == "mel_mel":
        mask_rng = rng_stream(state.seed, "mask", state.step)
        masked = np.stack(
            [mask_mel_array(item[0], cfg.mask_spec, mask_rng, cfg.feature) for item in batch]
        )
        emb_orig = project(model.generator.encode_mel(mel), model.mel_head, "mel")
        emb_mask = project(
            model.generator.encode_mel(torch.from_numpy(masked).float()),
            model.mel_head,
            "mel",
        )
        l_cl_g_t = mel_mel_infonce(emb_orig, emb_mask, ccfg)
    elif weights.cl_mode == "mel_wave":
        with torch.no_grad():
            wave_embs_detached = [
                project(features[-1], model.wave_heads[d], "wave")
                for d, (_, features) in enumerate(real_out2)
            ]
        mel_emb = project(model.generator.encode_mel(mel), model.mel_head, "mel")
        per_disc_terms_g = [
            mel_wave_infonce(mel_emb, w, ccfg) for w in wave_embs_detached
        ]
        l_cl_g_t = sum(per_disc_terms_g[1:], per_disc_terms_g[0])
    l_g_total = compose_generator_loss(
        l_adv_g, l_fm, l_mel, l_cl_g_t if l_cl_g_t is not None else 0.0, weights
    )
    l_g_total.backward()
    state.g_opt.step()
    if phase_hook is not None:
        phase_hook("g_done", state)

    # logged scalars are 64-bit; totals recomposed at 64-bit so the breakdown
    # satisfies the weighted-sum identity exactly (optimization used float32)
    l_cl_g = float(l_cl_g_t.detach().item()) if l_cl_g_t is not None else 0.0
    l_cl_d = float(l_cl_d_t.detach().item()) if l_cl_d_t is not None else 0.0
    breakdown = LossBreakdown(
        l_adv_g=float(l_adv_g.detach().item()),
        l_adv_d=float(l_adv_d.detach().item()),
        l_fm=float(l_fm.detach().item()),
        l_mel=float(l_mel.detach().item()),
        l_cl=l_cl_g,
        l_cl_d=l_cl_d,
        per_disc_l_cl=per_disc_cl,
    )
    breakdown.l_g_total = compose_generator_loss(
        breakdown.l_adv_g, breakdown.l_fm, breakdown.l_mel, breakdown.l_cl, weights
    )
    breakdown.l_d_total = compose_discriminator_loss(
        breakdown.l_adv_d, breakdown.l_cl_d, weights
    )
    _check_finite(
        {
            "l_adv_g": breakdown.l_adv_g,
            "l_adv_d": breakdown.l_adv_d,
            "l_fm": breakdown.l_fm,
            "l_mel": breakdown.l_mel,
            "l_cl": breakdown.l_cl,
            "l_cl_d": breakdown.l_cl_d,
            "l_g_total": breakdown.l_g_total,
            "l_d_total": breakdown.l_d_total,
        },
        state.step,
    )
    state.step += 1
    return state, breakdown


# ---------------------------------------------------------------------------
# Validation


def validate(state: TrainState, corpus: AudioCorpus, cfg: TrainConfig) -> dict:
    """Synthesize every validation clip from its ground-truth mel and score it."""
    model = state.model
    model.eval()
    rows = []
    try:
        for entry in sorted(corpus.validation, key=lambda e: e.clip_id):
            clip = load_clip(entry, corpus.sample_rate_hz)
            mel = mel_spectrogram(clip, cfg.feature)
            with torch.no_grad():
                synth = (
                    model.generator(torch.from_numpy(mel.values).unsqueeze(0))
                    .squeeze(0)
                    .numpy()
                )
            mae, mcd_db, n_frames = evaluation.evaluate_pair(
                clip.samples, synth, cfg.feature
            )
            rows.append(
                {
                    "clip_id": entry.clip_id,
                    "mae": mae,
                    "mcd_dB": mcd_db,
                    "n_frames": n_frames,
                }
            )
    finally:
        model.train()
    mean_mae = float(np.mean([r["mae"] for r in rows])) if rows else 0.0
    mean_mcd = float(np.mean([r["mcd_dB"] for r in rows])) if rows else 0.0
    return {
        "step": state.step,
        "mae": mean_mae,
        "mcd_dB": mean_mcd,
        "per_clip": rows,
    }


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(state: TrainState, cfg: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT,
            "step": state.step,
            "config": config_to_dict(cfg),
            "model": state.model.state_dict(),
            "g_opt": state.g_opt.state_dict(),
            "d_opt": state.d_opt.state_dict(),
            "best_validation": state.best_validation,
        },
        path,
    )
    pointer = path.parent / "latest"
    pointer.write_text(path.name + "\n")
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format_version')!r}"
        )
    return payload


def restore_state(payload: dict, cfg: TrainConfig) -> TrainState:
    """Rebuild a TrainState from a checkpoint, refusing config mismatches.

    ``total_steps`` is exempt: extending a finished run is what resume is for.
    """
    saved = dict(payload["config"])
    current = config_to_dict(cfg)
    saved.pop("total_steps", None)
    current = {k: v for k, v in current.items() if k != "total_steps"}
    if saved != current:
        diffs = [
            key
            for key in sorted(set(saved) | set(current))
            if saved.get(key) != current.get(key)
        ]
        raise CheckpointError(
            f"checkpoint config does not match requested config (differs in: {diffs})"
        )
    state = build_state(cfg)
    state.model.load_state_dict(payload["model"])
    state.g_opt.load_state_dict(payload["g_opt"])
    state.d_opt.load_state_dict(payload["d_opt"])
    state.step = int(payload["step"])
    state.best_validation = payload.get("best_validation")
    return state


# ---------------------------------------------------------------------------
# Full run


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Append-only CSV with one row per training step plus validation rows."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh: IO[str] = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_COLUMNS)
        self._fh.flush()

    def write_train_row(self, step: int, b: LossBreakdown, lr: float, wallclock_s: float):
        self._writer.writerow(
            [
                "train",
                step,
                _format_cell(b.l_adv_g),
                _format_cell(b.l_adv_d),
                _format_cell(b.l_fm),
                _format_cell(b.l_mel),
                _format_cell(b.l_cl),
                _format_cell(b.l_cl_d),
                _format_cell(b.l_g_total),
                _format_cell(b.l_d_total),
                _format_cell(lr),
                _format_cell(wallclock_s),
                "",
                "",
            ]
        )
        self._fh.flush()

    def write_validation_row(self, record: dict, lr: float, wallclock_s: float):
        self._writer.writerow(
            [
                "validation",
                record["step"],
                *[""] * 8,
                _format_cell(lr),
                _format_cell(wallclock_s),
                _format_cell(record["mae"]),
                _format_cell(record["mcd_dB"]),
            ]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()


def run_training(
    cfg: TrainConfig,
    corpus: AudioCorpus,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> TrainState:
    """Train to cfg.total_steps, writing metrics, checkpoints, and manifests."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.data_fraction < 1.0:
        corpus = select_subset(corpus, cfg.data_fraction, cfg.seed)
    manifest = out / "subset_manifest.txt"
    manifest.write_text("".join(e.clip_id + "\n" for e in corpus.train))

    if corpus.n_train == 0:
        raise ConfigError("training corpus is empty")
    if cfg.batch_size > corpus.n_train:
        raise ConfigError(
            f"batch_size={cfg.batch_size} exceeds training corpus size {corpus.n_train}"
        )

    if resume is not None:
        state = restore_state(load_checkpoint(resume), cfg)
    else:
        state = build_state(cfg)

    metrics = MetricsWriter(out / "metrics.csv")
    sample_log = open(out / "sample_log.csv", "w", newline="")
    sample_writer = csv.writer(sample_log)
    sample_writer.writerow(["step", "clip_id", "offset_samples"])

    cache: dict[str, WaveformClip] = {}
    spe = steps_per_epoch(corpus.n_train, cfg.batch_size)
    start = time.perf_counter()
    try:
        while state.step < cfg.total_steps:
            epoch = state.step // spe
            lr = cfg.learning_rate * cfg.lr_decay_per_epoch**epoch
            for group in state.g_opt.param_groups:
                group["lr"] = lr
            for group in state.d_opt.param_groups:
                group["lr"] = lr

            entries = batch_entries_for_step(corpus, cfg, state.step)
            batch = assemble_batch(
                entries, cfg, state.step, cache, corpus.sample_rate_hz
            )
            step_before = state.step
            try:
                _, breakdown = train_step(state, batch, cfg)
            except NonFiniteLossError as exc:
                dump = {
                    "term": exc.term,
                    "step": exc.step,
                    "values": exc.values,
                    "clip_ids": [item[2] for item in batch],
                }
                (out / "abort_dump.json").write_text(json.dumps(dump, indent=2) + "\n")
                raise
            for item in batch:
                sample_writer.writerow([step_before, item[2], item[3]])
            sample_log.flush()
            metrics.write_train_row(
                step_before, breakdown, lr, time.perf_counter() - start
            )

            if cfg.validate_every and state.step % cfg.validate_every == 0:
                record = validate(state, corpus, cfg)
                metrics.write_validation_row(record, lr, time.perf_counter() - start)
                if (
                    state.best_validation is None
                    or record["mae"] < state.best_validation["mae"]
                ):
                    state.best_validation = {"step": record["step"], "mae": record["mae"]}
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(state, cfg, out / f"ckpt_{state.step}.bin")
        save_checkpoint(state, cfg, out / f"ckpt_{state.step}.bin")
    finally:
        metrics.close()
        sample_log.close()
    return state
