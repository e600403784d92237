"""Command line entry point: gen, train, eval, infer.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric failure.
The HLNET_THREADS environment variable caps worker parallelism for the
per-video stages (generation and evaluation).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    CorpusSpec,
    FormatError,
    ManifestError,
    generate_corpus,
    load_manifest,
    read_features,
    save_corpus,
)
from .evaluate import evaluate_head
from .model import (
    CheckpointError,
    HLNetParams,
    MissingParameterError,
    ModelConfig,
    OnlineScorer,
    eval_forward,
)
from .relation import RelationConfig
from .train import TrainConfig, TrainingDiverged, fit, format_train_config, parse_train_config

from .autodiff import sigmoid_np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_BRANCH_LETTER = {"H": "holistic", "L": "localized", "S": "score"}
_SIMILARITY_FLAG = {"v1": "cosine_v1", "v3": "exp_v3"}


def workers_from_env(default: int = 4) -> int:
    cap = os.environ.get("HLNET_THREADS")
    limit = min(default, os.cpu_count() or 1)
    if cap is not None:
        try:
            limit = min(limit, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"HLNET_THREADS must be an integer, got {cap!r}") from None
    return max(1, limit)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.videos < 1:
        parser.error("--videos must be at least 1")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        parser.error(f"output directory {out} is not empty (use --force to overwrite)")
    spec = CorpusSpec(
        n_videos=args.videos,
        positive_fraction=args.positive_fraction,
        train_fraction=args.train_fraction,
        t_prime_range=(args.t_min, args.t_max),
        d_visual=args.d_visual,
        d_audio=args.d_audio,
        audio_dominant_fraction=args.audio_dominant,
        visual_dominant_fraction=args.visual_dominant,
    )
    records = generate_corpus(spec, seed=args.seed, workers=workers_from_env())
    manifest = save_corpus(records, out)
    counts: dict[tuple[str, int], int] = {}
    for record in records:
        counts[(record.split, record.weak_label)] = counts.get((record.split, record.weak_label), 0) + 1
    for (split, label), n in sorted(counts.items()):
        print(f"{split} {'positive' if label else 'negative'}: {n}")
    print(f"manifest: {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _parse_branches(value: str, parser: argparse.ArgumentParser) -> tuple[str, ...]:
    names = []
    for token in value.split(","):
        token = token.strip()
        if not token:
            continue
        name = _BRANCH_LETTER.get(token.upper(), token.lower())
        if name not in _BRANCH_LETTER.values():
            parser.error(f"unknown branch {token!r} (expected subset of H,L,S)")
        names.append(name)
    if not names:
        parser.error("--branches must enable at least one of H,L,S")
    return tuple(names)


def _resolved_train_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig()
    if args.config is not None:
        config = parse_train_config(Path(args.config).read_text(encoding="utf-8"), base=config)
    overrides = {}
    for flag, field_name in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("seed", "seed"),
        ("lam", "lam"),
        ("q", "q"),
        ("lr", "lr"),
        ("gamma_len", "gamma_len"),
        ("dropout", "dropout_rate"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[field_name] = value
    if args.lr_drops is not None:
        overrides["lr_drop_epochs"] = tuple(
            int(v) for v in args.lr_drops.split(",") if v.strip()
        )
    if args.distill_sum:
        overrides["distill_sum"] = True
    if args.freeze_approx:
        overrides["freeze_approx"] = True
    return replace(config, **overrides)


def cmd_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    records = load_manifest(args.manifest)
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        raise ManifestError(f"{args.manifest}: no train-split records")
    config = _resolved_train_config(args)
    first = train_records[0]
    relation = RelationConfig(
        tau=args.tau,
        gamma=args.gamma,
        sigma=args.sigma,
        similarity_kind=_SIMILARITY_FLAG[args.similarity],
        mask_zeros=args.mask_zeros,
        normalize_local=not args.raw_local,
    )
    model_config = ModelConfig(
        d_visual=first.features["visual"].dim if "visual" in first.features else 0,
        d_audio=first.features["audio"].dim if "audio" in first.features else 0,
        modality=args.modality,
        branches=_parse_branches(args.branches, parser),
        dropout_rate=config.dropout_rate,
        relation=relation,
    )

    run_dir = Path(args.out)
    checkpoints = run_dir / "checkpoints"
    checkpoints.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(format_train_config(config), encoding="utf-8")
    resolved = {
        "manifest": str(args.manifest),
        "modality": model_config.modality,
        "branches": list(model_config.branches),
        "similarity": args.similarity,
        "tau": relation.tau,
        "gamma": relation.gamma,
        "sigma": relation.sigma,
        "mask_zeros": relation.mask_zeros,
        "normalize_local": relation.normalize_local,
        "save_every": args.save_every,
        "n_train_videos": len(train_records),
    }
    (run_dir / "run.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    history_path = run_dir / "history.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_bce", "l_bce2", "l_distill", "l_total", "lr"])

        def on_epoch(epoch, params, report):
            from .train import lr_at

            writer.writerow(
                [
                    epoch,
                    repr(report.l_bce),
                    repr(report.l_bce2),
                    repr(report.l_distill),
                    repr(report.l_total),
                    repr(lr_at(epoch, config)),
                ]
            )
            fh.flush()
            if args.save_every and epoch % args.save_every == 0:
                params.save(checkpoints / f"epoch_{epoch:04d}.hlnp")

        params, history = fit(train_records, config, model_config, on_epoch=on_epoch)

    params.save(checkpoints / "final.hlnp")
    print(f"trained {config.epochs} epochs on {len(train_records)} videos")
    print(f"final losses: total={history[-1].l_total:.6f} bce={history[-1].l_bce:.6f}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _eval_one_checkpoint(checkpoint: Path, records, heads, workers: int):
    params = HLNetParams.load(checkpoint)
    return {head: evaluate_head(params, records, head, workers=workers) for head in heads}


def cmd_eval(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    records = [r for r in load_manifest(args.manifest) if r.split == "test"]
    if not records:
        raise ManifestError(f"{args.manifest}: no test-split records")
    heads = ("offline", "online") if args.head == "both" else (args.head,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers_from_env()

    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FormatError(f"checkpoint {checkpoint} does not exist")
    reports = _eval_one_checkpoint(checkpoint, records, heads, workers)
    for head, report in reports.items():
        report.write_csv(out / f"{head}.csv")
        report.write_json(out / f"{head}.json")
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        print(f"{head}: ap={report.ap:.4f} auc={auc} frames={report.n_frames}")

    if args.per_epoch:
        run_checkpoints = sorted(checkpoint.parent.glob("epoch_*.hlnp"))
        if not run_checkpoints:
            raise FormatError(f"no epoch checkpoints next to {checkpoint}")
        with open(out / "per_epoch.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", *[f"{h}_ap" for h in heads]])
            for ck in run_checkpoints:
                epoch = int(ck.stem.split("_")[1])
                row = _eval_one_checkpoint(ck, records, heads, workers)
                writer.writerow([epoch, *[repr(row[h].ap) for h in heads]])
        print(f"per-epoch curve: {out / 'per_epoch.csv'} ({len(run_checkpoints)} checkpoints)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    params = HLNetParams.load(args.checkpoint)
    cfg = params.config
    xv = read_features(args.visual).values if args.visual else None
    xa = read_features(args.audio).values if args.audio else None
    if cfg.modality in ("both", "visual") and xv is None:
        parser.error(f"checkpoint expects visual features (modality={cfg.modality})")
    if cfg.modality in ("both", "audio") and xa is None:
        parser.error(f"checkpoint expects audio features (modality={cfg.modality})")

    if args.online:
        scorer = OnlineScorer(params)  # validates the approximator weights exist
        t_prime = (xv if xv is not None else xa).shape[0]
        rows = []
        for t in range(t_prime):
            score = scorer.push(
                None if xv is None else xv[t],
                None if xa is None else xa[t],
            )
            rows.append((t, score))
    else:
        activations = eval_forward(xv, xa, params, heads=("offline",))["offline"]
        rows = list(enumerate(sigmoid_np(activations)))

    lines = ["snippet_index,score"]
    lines.extend(f"{t},{score!r}" for t, score in rows)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(rows)} scores to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hlnet",
        description="Weakly supervised audio-visual temporal event detection toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic weakly labeled corpus")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--videos", type=int, default=200, help="total number of videos")
    gen.add_argument("--seed", type=int, default=0, help="corpus seed")
    gen.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    gen.add_argument("--positive-fraction", type=float, default=0.5, help="fraction of positive videos")
    gen.add_argument("--train-fraction", type=float, default=0.8, help="fraction of videos in the train split")
    gen.add_argument("--t-min", type=int, default=40, help="minimum snippets per video")
    gen.add_argument("--t-max", type=int, default=200, help="maximum snippets per video")
    gen.add_argument("--d-visual", type=int, default=64, help="visual feature width")
    gen.add_argument("--d-audio", type=int, default=32, help="audio feature width")
    gen.add_argument("--audio-dominant", type=float, default=0.3, help="fraction of events visible only in audio")
    gen.add_argument("--visual-dominant", type=float, default=0.3, help="fraction of events visible only in video")
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train a model on a corpus manifest")
    train.add_argument("--manifest", required=True, help="corpus manifest path")
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--config", default=None, help="training config file (key = value lines)")
    train.add_argument("--epochs", type=int, default=None, help="training epochs")
    train.add_argument("--batch-size", type=int, default=None, help="videos per batch")
    train.add_argument("--seed", type=int, default=None, help="training seed")
    train.add_argument("--lambda", dest="lam", type=float, default=None, help="distillation weight")
    train.add_argument("--q", type=int, default=None, help="top-K divisor")
    train.add_argument("--lr", type=float, default=None, help="initial learning rate")
    train.add_argument("--lr-drops", default=None, help="comma-separated epochs where lr divides by 10")
    train.add_argument("--gamma-len", type=int, default=None, help="max snippets per training video")
    train.add_argument("--dropout", type=float, default=None, help="dropout rate")
    train.add_argument("--distill-sum", action="store_true", help="batch-sum distillation instead of mean")
    train.add_argument("--freeze-approx", action="store_true", help="keep the online head out of the gradient flow")
    train.add_argument("--modality", choices=("both", "visual", "audio"), default="both", help="input modalities")
    train.add_argument("--branches", default="H,L,S", help="enabled relation branches, e.g. H,L or S")
    train.add_argument("--similarity", choices=("v1", "v3"), default="v1", help="holistic similarity function")
    train.add_argument("--tau", type=float, default=0.7, help="similarity threshold")
    train.add_argument("--gamma", type=float, default=1.0, help="proximity distance exponent")
    train.add_argument("--sigma", type=float, default=1.0, help="proximity distance scale")
    train.add_argument("--mask-zeros", action="store_true", help="exclude thresholded entries from normalization")
    train.add_argument("--raw-local", action="store_true", help="skip row normalization of the proximity prior")
    train.add_argument("--save-every", type=int, default=0, help="save a checkpoint every N epochs (0: final only)")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True, help="checkpoint path")
    ev.add_argument("--manifest", required=True, help="corpus manifest path")
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--head", choices=("both", "offline", "online"), default="both", help="which head(s) to score")
    ev.add_argument("--per-epoch", action="store_true", help="also replay every epoch checkpoint next to --checkpoint")
    ev.set_defaults(func=cmd_eval)

    infer = sub.add_parser("infer", help="score one video's feature file(s)")
    infer.add_argument("--checkpoint", required=True, help="checkpoint path")
    infer.add_argument("--visual", default=None, help="visual feature file")
    infer.add_argument("--audio", default=None, help="audio feature file")
    mode = infer.add_mutually_exclusive_group(required=True)
    mode.add_argument("--online", action="store_true", help="stream scores causally (approximator only)")
    mode.add_argument("--offline", action="store_true", help="score with the full network")
    infer.add_argument("--out", default=None, help="output CSV (default: stdout)")
    infer.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        FormatError,
        ManifestError,
        CheckpointError,
        MissingParameterError,
        FileNotFoundError,
        IsADirectoryError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
