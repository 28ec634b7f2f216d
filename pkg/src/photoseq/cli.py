"""Command-line entry point.

Commands cover the whole pipeline: demo-data (synthetic corpus), synth
(sample cache), calibrate-noise, train, sequence, and eval. Every command
validates its configuration before touching the filesystem. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, synthetic
from .config import ToolkitConfig, load_config
from .dataset import SampleBuilder, write_sample_cache
from .errors import ConfigError, DataError, NumericalError, PhotoseqError
from .imaging import FrameClip, load_clip, load_image, save_clip
from .network import init_weights, load_weights, save_weights
from .noise import estimate_noise_params, load_noise_params, save_noise_params
from .sequencer import build_plan, sequence, sequence_stream, write_sequence
from .training import train, train_three_models


def _load_corpus(paths: list[str]) -> list[FrameClip]:
    """Each path is either one clip directory of PNGs or a root of clip directories."""
    clips = []
    for root in paths:
        root = Path(root)
        if not root.is_dir():
            raise DataError(f"corpus path is not a directory: {root}")
        if any(root.glob("*.png")):
            clips.append(load_clip(root))
            continue
        subdirs = sorted(d for d in root.iterdir() if d.is_dir())
        if not subdirs:
            raise DataError(f"no clips found under {root}")
        clips.extend(load_clip(d) for d in subdirs)
    return clips


def _effective_config(args) -> ToolkitConfig:
    overrides: dict[str, dict] = {}
    if getattr(args, "iterations", None) is not None:
        sched = {"total_iterations": args.iterations}
        if args.iterations > 0:
            sched["lr_decay_every"] = min(25_000, args.iterations)
        overrides.setdefault("schedule", {}).update(sched)
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("schedule", {})["seed"] = args.seed
        overrides.setdefault("evaluation", {})["seed"] = args.seed
    if getattr(args, "levels", None) is not None:
        overrides.setdefault("sequencer", {})["levels"] = args.levels
        overrides.setdefault("evaluation", {})["levels"] = args.levels
    if getattr(args, "n_frames", None) is not None:
        overrides.setdefault("sequencer", {})["n_frames"] = args.n_frames
    return load_config(getattr(args, "config", None), overrides)


def _write_config_echo(path: Path, cfg: ToolkitConfig, extra: dict | None = None) -> None:
    payload = {"config": cfg.as_dict()}
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def cmd_demo_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.clips):
        clip = synthetic.make_motion_clip(
            n_frames=args.frames, height=args.height, width=args.width, seed=args.seed * 1000 + i
        )
        save_clip(out / f"clip_{i:03d}", clip, bit_depth=16)
    print(f"wrote {args.clips} synthetic clips under {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _effective_config(args)
    noise = load_noise_params(args.noise) if args.noise else cfg.noise
    clips = _load_corpus(args.corpus)
    builder = SampleBuilder(clips, cfg.builder, noise, augment_samples=False)
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(max(args.count, 1), dtype=np.uint64)]
    seeds = seeds[: args.count]
    if args.workers > 1 and seeds:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            samples = list(pool.map(builder.generate, seeds))
    else:
        samples = [builder.generate(s) for s in seeds]
    out = Path(args.out)
    manifest = write_sample_cache(out, samples, seed=args.seed, verify=True)
    _write_config_echo(out / "config_echo.json", cfg, {"count": args.count, "seed": args.seed})
    print(f"cached {len(samples)} samples; manifest at {manifest}")
    return 0


def cmd_calibrate_noise(args) -> int:
    bursts = _load_corpus(args.bursts)
    params = estimate_noise_params(bursts, gain_label=args.gain_label)
    save_noise_params(args.out, params)
    print(f"alpha={params.alpha:.6g} beta={params.beta:.6g} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    noise = load_noise_params(args.noise) if args.noise else cfg.noise
    out = Path(args.out)
    clips = _load_corpus(args.corpus) if args.corpus else []
    if not clips and not args.dry_run and cfg.schedule.total_iterations > 0:
        raise DataError("training needs --corpus unless --dry-run or --iterations 0")
    builder = (
        SampleBuilder(clips, cfg.builder, noise, augment_samples=not args.no_augment) if clips else None
    )
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".log.csv")
    common = dict(
        loss_weights=cfg.loss,
        log_path=log_path,
        checkpoint_dir=Path(args.checkpoint_dir) if args.checkpoint_dir else None,
        checkpoint_every=args.checkpoint_every,
        dry_run=args.dry_run,
    )
    if cfg.loss.lambda_perc > 0 and not args.dry_run:
        raise ConfigError(
            "no pretrained perceptual extractor is bundled; set loss.lambda_perc: 0 in the config "
            "or supply one programmatically via photoseq.training.train"
        )
    if args.three_models:
        if builder is None:
            raise DataError("--three-models needs a corpus")
        weight_sets = train_three_models(builder, cfg.network, cfg.schedule, **common)
        for count, weights in weight_sets.items():
            path = out.with_name(f"{out.stem}-noisy{count}{out.suffix or '.pt'}")
            save_weights(weights, path)
            print(f"wrote {path}")
    else:
        weights = train(builder, cfg.network, cfg.schedule, **common)
        save_weights(weights, out)
        print(f"wrote {out}")
    _write_config_echo(out.with_name(out.stem + ".config.json"), cfg)
    return 0


def _load_weight_args(paths: list[str], cfg: ToolkitConfig):
    """One path -> single-model weights; three -> {2,1,0} keyed weight sets."""
    if len(paths) == 1:
        return load_weights(paths[0], cfg.network)
    if len(paths) == 3:
        return {count: load_weights(p, cfg.network) for count, p in zip((2, 1, 0), paths)}
    raise ConfigError(f"--weights takes one file (single-model) or three (noisy-2,1,0 order), got {len(paths)}")


def _fingerprints(weights) -> dict | str:
    if isinstance(weights, dict):
        return {f"noisy{k}": w.fingerprint() for k, w in weights.items()}
    return weights.fingerprint()


def cmd_sequence(args) -> int:
    cfg = _effective_config(args)
    weights = _load_weight_args(args.weights, cfg)
    out = Path(args.out)
    if args.triplet:
        pre, long_img, post = (load_image(p) for p in args.triplet)
        plan = build_plan(cfg.sequencer.levels, cfg.sequencer.n_frames)
        from .imaging import ExposureTriplet

        triplet = ExposureTriplet(
            short_pre=pre,
            long=long_img,
            short_post=post,
            n_frames_long=cfg.sequencer.n_frames or 3,
            short_is_noisy=(True, True),
        )
        seqs = [sequence(triplet, weights, plan)]
    else:
        capture_dir = Path(args.captures)
        files = sorted(capture_dir.glob("*.png"))
        if not files:
            raise DataError(f"no PNG captures in {capture_dir}")
        tags = []
        for f in files:
            if "short" in f.stem.lower():
                tags.append("short")
            elif "long" in f.stem.lower():
                tags.append("long")
            else:
                raise DataError(f"capture {f.name} has neither 'short' nor 'long' in its name")
        images = [load_image(f) for f in files]
        try:
            seqs = sequence_stream(images, tags, weights, cfg.sequencer.levels, cfg.sequencer.n_frames)
        except ValueError as exc:
            raise DataError(f"bad capture alternation: {exc}") from exc
    for i, seq in enumerate(seqs):
        directory = out if len(seqs) == 1 else out / f"sequence_{i:03d}"
        manifest = write_sequence(directory, seq, _fingerprints(weights), {"config": cfg.as_dict()})
        print(f"wrote {len(seq)} frames to {directory} (manifest {manifest.name})")
    return 0


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    noise = load_noise_params(args.noise) if args.noise else cfg.noise
    corpus = _load_corpus(args.corpus)
    out = Path(args.out)
    ev = cfg.evaluation
    if args.protocol == "timepoints":
        weights = _load_weight_args(args.weights, cfg)
        report = evaluation.eval_timepoints(
            weights, corpus, noise, n=ev.n, levels=ev.levels, seed=ev.seed, oracle=args.oracle
        )
    elif args.protocol == "blur-sweep":
        weights = _load_weight_args(args.weights, cfg)
        report = evaluation.eval_blur_sweep(
            weights, corpus, noise, n_list=ev.n_list, seed=ev.seed, oracle=args.oracle
        )
    else:  # relative
        weights = _load_weight_args(args.weights, cfg)
        single = weights if not isinstance(weights, dict) else weights[2]
        by_count = weights if isinstance(weights, dict) else {0: weights, 1: weights, 2: weights}
        report = evaluation.eval_relative(
            single, by_count, corpus, noise, n=ev.n, levels=ev.levels, seed=ev.seed
        )
    report.metadata["weights"] = _fingerprints(weights)
    csv_path, txt_path = report.write(out)
    _write_config_echo(out / "config_echo.json", cfg)
    print(txt_path.read_text())
    print(f"wrote {csv_path} and {txt_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photoseq",
        description="Recover sharp image sequences from short-long-short exposure triplets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("demo-data", help="write a synthetic motion corpus", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--clips", type=int, default=4, help="number of clips")
    p.add_argument("--frames", type=int, default=48, help="frames per clip")
    p.add_argument("--height", type=int, default=96, help="frame height")
    p.add_argument("--width", type=int, default=128, help="frame width")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.set_defaults(func=cmd_demo_data)

    p = sub.add_parser("synth", help="cache training samples to disk", formatter_class=fmt)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--corpus", nargs="+", required=True, help="clip directories or corpus roots")
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--count", type=int, default=16, help="samples to generate")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--noise", help="noise parameter file (defaults to config values)")
    p.add_argument("--workers", type=int, default=1, help="parallel sample builders")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate-noise", help="fit noise coefficients from static bursts", formatter_class=fmt)
    p.add_argument("--bursts", nargs="+", required=True, help="burst clip directories")
    p.add_argument("--out", required=True, help="output parameter file")
    p.add_argument("--gain-label", default="default", help="label for this gain setting")
    p.set_defaults(func=cmd_calibrate_noise)

    p = sub.add_parser("train", help="optimize decomposition weights", formatter_class=fmt)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--corpus", nargs="*", default=[], help="clip directories or corpus roots")
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--iterations", type=int, default=None, help="override schedule.total_iterations")
    p.add_argument("--seed", type=int, default=None, help="override schedule.seed")
    p.add_argument("--noise", help="noise parameter file (defaults to config values)")
    p.add_argument("--three-models", action="store_true", help="train noisy-2/1/0 specialist weights")
    p.add_argument("--no-augment", action="store_true", help="disable training augmentation")
    p.add_argument("--log", help="training CSV log path (default: alongside weights)")
    p.add_argument("--checkpoint-dir", help="periodic checkpoint directory")
    p.add_argument("--checkpoint-every", type=int, default=5000, help="iterations between checkpoints")
    p.add_argument("--dry-run", action="store_true", help="exercise schedule and logging only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sequence", help="decompose captures into a photosequence", formatter_class=fmt)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--weights", nargs="+", required=True, help="weight file, or three (noisy-2,1,0 order)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--triplet", nargs=3, metavar=("PRE", "LONG", "POST"), help="three capture images")
    src.add_argument("--captures", help="directory of alternating *short*/*long* PNGs")
    p.add_argument("--levels", type=int, default=None, help="decomposition levels (2**L - 1 frames)")
    p.add_argument("--n-frames", type=int, default=None, help="declared latent frame count (2**L - 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sequence)

    p = sub.add_parser("eval", help="run a measurement protocol", formatter_class=fmt)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--weights", nargs="+", required=True, help="weight file, or three (noisy-2,1,0 order)")
    p.add_argument("--corpus", nargs="+", required=True, help="held-out clip directories")
    p.add_argument("--protocol", choices=("timepoints", "blur-sweep", "relative"), default="timepoints")
    p.add_argument("--noise", help="noise parameter file (defaults to config values)")
    p.add_argument("--seed", type=int, default=None, help="override evaluation seed")
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself (pipeline self-test)")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except PhotoseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
