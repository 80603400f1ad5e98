"""Command-line entry point: ``vologan <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical failure (non-finite loss or gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _thread_limit():
    value = os.environ.get("VOLO_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"VOLO_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


# -- subcommands ----------------------------------------------------------------------

def cmd_dataset_synth(args) -> int:
    from .data import synth_toy_dataset

    factor = 2 ** args.levels
    if args.size <= 0 or args.size % factor:
        raise UsageError(f"--size {args.size} must be a positive multiple of 2^{args.levels}={factor} "
                         "so the generator can downsample it")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    manifests = synth_toy_dataset(args.out, args.n, args.size, np.random.default_rng(args.seed))
    for m in manifests:
        print(f"{m.domain}: {m.count} samples of {args.size}x{args.size} in {Path(args.out) / m.domain}")
    return EXIT_OK


def _load_run_config(args):
    from .config import load_config

    overrides = _parse_set(args.set)
    for flag, key in (("epochs", "epochs"), ("seed", "seed"), ("run_dir", "run_dir"),
                      ("synthetic", "data.synthetic_manifest"), ("target", "data.target_manifest")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _manifests(cfg):
    from .data import read_manifest

    if not cfg.data.synthetic_manifest or not cfg.data.target_manifest:
        raise UsageError("config needs data.synthetic_manifest and data.target_manifest (or --synthetic/--target)")
    return read_manifest(cfg.data.synthetic_manifest), read_manifest(cfg.data.target_manifest)


def cmd_train(args) -> int:
    from .training import train

    cfg = _load_run_config(args)
    synthetic, target = _manifests(cfg)

    def report(row):
        if args.verbose:
            print(f"epoch {row['epoch']} step {row['step']} total_g {row['total_g']:.4f} "
                  f"total_d {row['total_d']:.4f}", flush=True)

    state = train(cfg, synthetic, target, resume=args.resume, on_step=report)
    print(f"trained to epoch {state.epoch} ({state.step} steps); metrics in {cfg.metrics}, "
          f"checkpoints in {cfg.checkpoints}")
    return EXIT_OK


def cmd_translate(args) -> int:
    from .data import DatasetManifest, from_scaled, read_manifest, save_sample, write_manifest
    from .training import load_checkpoint, translate

    state = load_checkpoint(args.checkpoint)
    generator = state.G_ST if args.direction == "st" else state.G_TS
    source = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    domain = "target" if args.direction == "st" else "synthetic"
    paths = []
    for start in range(0, source.count, args.batch_size):
        idx = range(start, min(start + args.batch_size, source.count))
        batch = np.stack([source.load_scaled(i) for i in idx])
        for i, y in zip(idx, translate(generator, batch, args.batch_size)):
            name = Path(source.paths[i]).name
            save_sample(out / name, from_scaled(y))
            paths.append(name)
    write_manifest(out / f"{domain}.manifest", DatasetManifest(domain, out, paths, source.size))
    print(f"translated {len(paths)} samples ({args.direction}) into {out}")
    return EXIT_OK


def cmd_eval_pca(args) -> int:
    from .data import read_manifest
    from .evaluation import pca_protocol, write_scatter_csv

    stages = [s for s in ("before", "after") if getattr(args, s)] or ["before", "after"]
    synthetic = read_manifest(args.synthetic) if args.synthetic else None
    target = read_manifest(args.target) if args.target else None
    result = pca_protocol(args.run, n=args.n, k=args.k, stages=stages, synthetic=synthetic, target=target)
    for stage in stages:
        print(f"{stage}: domain_distance={result[stage].distance:.6f} "
              f"explained={np.round(result[stage].model.explained_fraction, 4).tolist()}")
    print(f"input gap (untranslated synthetic vs target): {result['input'].distance:.6f}")
    if len(stages) == 2:
        decreased = result["after"].distance < result["before"].distance
        print(f"domain_distance decreased: {'yes' if decreased else 'no'}")
    if args.scatter:
        for stage in stages:
            write_scatter_csv(Path(args.scatter).with_suffix(f".{stage}.csv"), result[stage])
    if args.json:
        summary = {stage: result[stage].summary() for stage in stages + ["input"]}
        Path(args.json).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_eval_hist(args) -> int:
    from .data import load_sample, to_scaled
    from .evaluation import channel_histogram

    hist = channel_histogram(to_scaled(load_sample(args.sample)), args.bins)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    lines = ["bin_lo,bin_hi," + ",".join(hist)]
    for b in range(args.bins):
        lines.append(f"{edges[b]:.6g},{edges[b + 1]:.6g}," + ",".join(str(int(hist[c][b])) for c in hist))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval_pointcloud(args) -> int:
    from .data import load_sample, to_scaled
    from .evaluation import pointcloud_export

    n = pointcloud_export(to_scaled(load_sample(args.sample)), args.out, args.stride)
    print(f"wrote {n} vertices to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import CASES, TOLERANCE, run_case

    tol = TOLERANCE if args.tol is None else args.tol
    names = set(args.only) if args.only else None
    unknown = (names or set()) - {c.name for c in CASES}
    if unknown:
        raise UsageError(f"unknown gradcheck cases {sorted(unknown)}")
    failed = []
    for case in CASES:
        if names and case.name not in names:
            continue
        err = run_case(case, seed=args.seed, bits=args.bits)
        status = "ok" if err < tol else "FAIL"
        print(f"{case.kind:6s} {case.name:24s} max_rel_err={err:.3e} {status}", flush=True)
        if err >= tol:
            failed.append(case.name)
    if failed:
        print(f"{len(failed)} case(s) above tolerance {tol:g}: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all cases below {tol:g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .config import load_config
    from .models import (PUBLISHED_DISCRIMINATOR_COUNTS, PUBLISHED_GENERATOR_COUNTS, build_discriminator,
                         build_generator, count_parameters, layer_table)

    cfg = load_config(args.config)
    rng = np.random.default_rng(0)
    models = {"generator": build_generator(cfg.generator, rng),
              "discriminator": build_discriminator(cfg.discriminator, rng)}
    for name, model in models.items():
        total, trainable, frozen = count_parameters(model)
        ref_total, ref_frozen = PUBLISHED_GENERATOR_COUNTS if name == "generator" else PUBLISHED_DISCRIMINATOR_COUNTS
        print(f"{name}: total={total:,} trainable={trainable:,} non_trainable={frozen:,}")
        print(f"  published reference: total={ref_total:,} non_trainable={ref_frozen:,} "
              f"delta_total={total - ref_total:+,} delta_non_trainable={frozen - ref_frozen:+,} "
              f"(informative; input {cfg.generator.input_size[0]}x{cfg.generator.input_size[1]})")
        if args.layers:
            for lname, shape, size, trainable_flag in layer_table(model):
                print(f"    {lname:48s} {str(shape):22s} {size:>10,} {'' if trainable_flag else '(buffer)'}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vologan", description="RGB-D CycleGAN toolkit")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("dataset-synth", help="write a procedural two-domain RGB-D toy dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=64, help="samples per domain")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--levels", type=int, default=4, help="generator levels the size must support")
    s.set_defaults(func=cmd_dataset_synth)

    s = sub.add_parser("train", help="train both generators and discriminators")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", help="checkpoint directory to continue from")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--run-dir", dest="run_dir")
    s.add_argument("--synthetic", help="synthetic-domain manifest")
    s.add_argument("--target", help="target-domain manifest")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="batch-translate a manifest with a trained generator")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--direction", choices=("st", "ts"), default="st",
                   help="st: synthetic to target, ts: target to synthetic")
    s.add_argument("--batch-size", type=int, default=8)
    s.set_defaults(func=cmd_translate)

    e = sub.add_parser("eval", help="evaluation tools")
    esub = e.add_subparsers(dest="tool", required=True, parser_class=_Parser)
    s = esub.add_parser("pca", help="PCA centroid distance between generated and real samples")
    s.add_argument("--run", required=True, help="training run directory")
    s.add_argument("--before", action="store_true", help="generator at its initial checkpoint")
    s.add_argument("--after", action="store_true", help="generator at its latest checkpoint")
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--synthetic", help="synthetic manifest (default: from the run config)")
    s.add_argument("--target", help="target manifest (default: from the run config)")
    s.add_argument("--scatter", help="write scatter CSVs next to this path")
    s.add_argument("--json", help="write a JSON summary")
    s.set_defaults(func=cmd_eval_pca)
    s = esub.add_parser("hist", help="per-channel histogram of one sample")
    s.add_argument("--sample", required=True)
    s.add_argument("--bins", type=int, default=64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_hist)
    s = esub.add_parser("pointcloud", help="export one sample as an ASCII PLY point cloud")
    s.add_argument("--sample", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stride", type=int, default=2)
    s.set_defaults(func=cmd_eval_pointcloud)

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss term")
    s.add_argument("--bits", type=int, choices=(32, 64), default=64)
    s.add_argument("--tol", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--only", nargs="+", metavar="CASE")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("inspect", help="parameter counts and layer table for a config")
    s.add_argument("--config", required=True)
    s.add_argument("--layers", action="store_true")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .data import SampleFormatError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SampleFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
