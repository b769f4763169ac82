"""Operator entry points: prepare, subset, train, synth, eval, validate-config.

Exit codes: 0 success, 1 training abort (non-finite loss), 2 I/O or
missing artifact, 3 invalid config. Every command echoes its fully
resolved configuration (defaults applied) before doing any work, and no
command writes into the input corpus directory.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .audio_io import (
    CorpusError,
    dump_filterbank,
    load_clip,
    load_corpus,
    select_subset,
)
from .config import (
    ConfigError,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    dump_resolved,
    resolve_config,
)
from .trainer import (
    CheckpointError,
    NonFiniteLossError,
    load_checkpoint,
    restore_state,
    run_training,
)
from . import evaluation

EXIT_OK = 0
EXIT_TRAIN_ABORT = 1
EXIT_IO = 2
EXIT_CONFIG = 3


class OutputDirLocked(RuntimeError):
    pass


@contextlib.contextmanager
def output_lock(out_dir: Path):
    """One writer per out_dir; concurrent invocations must use distinct dirs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".vocl.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLocked(
            f"{out_dir} is locked by another invocation (remove {lock} if stale)"
        ) from None
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _echo(label: str, payload: dict) -> None:
    print(f"[vocl] {label}:")
    print(json.dumps(payload, indent=2))


def _load_model_from_checkpoint(ckpt_path: str):
    payload = load_checkpoint(ckpt_path)
    cfg = config_from_dict(payload["config"])
    cfg.validate()
    state = restore_state(payload, cfg)
    return state, cfg


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    _echo("resolved config", config_to_dict(cfg))
    out = Path(args.out)
    with output_lock(out):
        dump_resolved(cfg, out / "resolved_config.json")
        corpus = load_corpus(args.corpus)
        if corpus.sample_rate_hz != cfg.feature.sample_rate_hz:
            raise ConfigError(
                f"corpus sample rate {corpus.sample_rate_hz} != configured "
                f"{cfg.feature.sample_rate_hz} (resampling is not performed)"
            )
        state = run_training(cfg, corpus, out, resume=args.resume)
    print(f"[vocl] finished at step {state.step}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state, cfg = _load_model_from_checkpoint(args.ckpt)
    _echo(
        "resolved eval run",
        {
            "ckpt": args.ckpt,
            "corpus": args.corpus,
            "out": args.out,
            "split": args.split,
            "ground_truth": args.ground_truth,
            "dump_mels": args.dump_mels,
            "checkpoint_step": state.step,
        },
    )
    corpus = load_corpus(args.corpus)
    if corpus.sample_rate_hz != cfg.feature.sample_rate_hz:
        raise ConfigError(
            f"corpus sample rate {corpus.sample_rate_hz} != checkpoint "
            f"{cfg.feature.sample_rate_hz}"
        )
    entries = corpus.validation if args.split == "validation" else corpus.train
    clips = [load_clip(e, corpus.sample_rate_hz) for e in entries]
    out = Path(args.out)
    with output_lock(out):
        generated = {c.clip_id: c.samples for c in clips} if args.ground_truth else None
        report = evaluation.evaluate_clips(
            state.model.generator,
            clips,
            cfg.feature,
            dump_mels_dir=out / "mels" if args.dump_mels else None,
            generated=generated,
        )
        csv_path, json_path = report.write(out)
    print(f"[vocl] wrote {csv_path} and {json_path}")
    print(
        f"[vocl] mae_mean={report.mae_mean:.6f} mcd_mean={report.mcd_mean:.6f} dB "
        f"over {len(report.rows)} clips"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    state, cfg = _load_model_from_checkpoint(args.ckpt)
    _echo(
        "resolved synth run",
        {
            "ckpt": args.ckpt,
            "corpus": args.corpus,
            "out": args.out,
            "split": args.split,
            "checkpoint_step": state.step,
        },
    )
    corpus = load_corpus(args.corpus)
    if corpus.sample_rate_hz != cfg.feature.sample_rate_hz:
        raise ConfigError(
            f"corpus sample rate {corpus.sample_rate_hz} != checkpoint "
            f"{cfg.feature.sample_rate_hz}"
        )
    entries = corpus.validation if args.split == "validation" else corpus.train
    clips = [load_clip(e, corpus.sample_rate_hz) for e in entries]
    out = Path(args.out)
    with output_lock(out):
        results = evaluation.synthesize_clips(
            state.model.generator, clips, cfg.feature, out
        )
        (out / "synth_manifest.json").write_text(json.dumps(results, indent=2) + "\n")
    total_clipped = sum(r["clipped_samples"] for r in results)
    print(f"[vocl] wrote {len(results)} WAVs to {out} ({total_clipped} clipped samples)")
    return EXIT_OK


def cmd_subset(args) -> int:
    _echo(
        "resolved subset run",
        {"corpus": args.corpus, "fraction": args.fraction, "seed": args.seed, "out": args.out},
    )
    corpus = load_corpus(args.corpus)
    try:
        subset = select_subset(corpus, args.fraction, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(e.clip_id + "\n" for e in subset.train))
    print(f"[vocl] wrote {subset.n_train} clip_ids to {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    _echo("resolved prepare run", {"corpus": args.corpus, "out": args.out})
    cfg = TrainConfig() if args.config is None else resolve_config(args.config, args.set or [])
    corpus = load_corpus(args.corpus)
    if corpus.sample_rate_hz != cfg.feature.sample_rate_hz:
        raise ConfigError(
            f"corpus sample rate {corpus.sample_rate_hz} != configured "
            f"{cfg.feature.sample_rate_hz}"
        )
    bin_path, sidecar = dump_filterbank(cfg.feature, args.out)
    _echo(
        "corpus summary",
        {
            "n_train": corpus.n_train,
            "n_validation": corpus.n_validation,
            "sample_rate_hz": corpus.sample_rate_hz,
            "filterbank": str(bin_path),
            "filterbank_sidecar": str(sidecar),
        },
    )
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    _echo("resolved config", config_to_dict(cfg))
    print("[vocl] config is valid")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocl",
        description="GAN vocoder training with auxiliary contrastive objectives",
    )
    parser.add_argument("--version", action="version", version=f"vocl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training per a config document")
    p.add_argument("--config", default=None, help="TOML or JSON run config")
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    p.add_argument("--corpus", required=True, help="LJSpeech-format corpus directory")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.add_argument("--dump-mels", action="store_true", help="write mel matrices for audits")
    p.add_argument(
        "--ground-truth",
        action="store_true",
        help="score each reference against itself (pipeline self-test)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="vocode a corpus split from ground-truth mels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("subset", help="write a deterministic data-fraction manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="manifest file path")
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("prepare", help="verify corpus layout and dump the filterbank")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=".", help="where to write the filterbank dump")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("validate-config", help="check a config and print it resolved")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    p.set_defaults(func=cmd_validate_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"[vocl] invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"[vocl] training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAIN_ABORT
    except (CorpusError, CheckpointError, OutputDirLocked, FileNotFoundError, OSError) as exc:
        print(f"[vocl] {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
