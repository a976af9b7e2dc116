"""Command-line entry point: ``segaug augment | eval | loss-check | sample-batches``.

Settings resolve as defaults < command-line flags < ``--config`` file, where
the config file holds ``key=value`` lines named after the long flags
(``p=0.5``, ``n-policy=third_of_L``, ``transforms=color_change,removal``).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augment import (
    COLOR_CHANGE,
    REMOVAL,
    TRANSFORM_ORDER,
    AugmentationConfig,
    NPolicy,
    augment_image,
    hash64,
    manifest_line,
)
from .evaluation import EvaluationError, evaluate, format_report, load_relevance, load_run
from .image import SUPPORTED_SUFFIXES, ImageError, load_image, save_image
from .losses import (
    DEFAULT_TAU,
    NonFiniteError,
    ScoreBatch,
    SmoothApParams,
    grad_check,
    smooth_ap_loss,
)
from .sampler import SamplerError, format_batch, load_manifest, sample_batch
from .segmentation import render_labels, segment_image, segment_report

log = logging.getLogger("segaug")

SEED_ENV = "SEGAUG_SEED"
GRAD_TOLERANCE = 1e-4

PRESETS = {
    "smoothap": frozenset({COLOR_CHANGE}),
    "triplet": frozenset({COLOR_CHANGE, REMOVAL}),
}


class UsageError(Exception):
    pass


# argument types ------------------------------------------------------------------


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _n_policy(text: str) -> NPolicy:
    try:
        return NPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _transforms(text: str) -> frozenset[str]:
    items = frozenset(t.strip() for t in text.split(",") if t.strip())
    bad = items - set(TRANSFORM_ORDER)
    if not items or bad:
        raise argparse.ArgumentTypeError(
            f"transforms must be a comma list drawn from {', '.join(TRANSFORM_ORDER)}"
        )
    return items


def _drop_bits(text: str) -> int:
    v = int(text)
    if not 0 <= v <= 7:
        raise argparse.ArgumentTypeError("drop-bits must be in [0, 7]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"{text} must be >= 0")
    return v


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return v


def _ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


# parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segaug", description="Segment-level logo augmentation and retrieval tooling."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key=value file; overrides flags")
        p.add_argument("--seed", type=_seed, help=f"master seed (fallback: ${SEED_ENV}, then 0)")

    aug = sub.add_parser("augment", help="segment-level augmentation of an image directory")
    aug.add_argument("in_dir", type=Path)
    aug.add_argument("out_dir", type=Path)
    common(aug)
    aug.add_argument("--preset", choices=sorted(PRESETS), default="smoothap")
    aug.add_argument("--p", type=_probability, default=0.5)
    aug.add_argument("--n-policy", type=_n_policy, default=NPolicy("third_of_L"))
    aug.add_argument("--transforms", type=_transforms, help="overrides --preset")
    aug.add_argument("--drop-bits", type=_drop_bits, default=3)
    aug.add_argument("--connectivity", choices=["four", "eight"], default="eight")
    aug.add_argument("--min-area", type=_non_negative_int, default=4)
    aug.add_argument("--jobs", type=_positive_int, default=1)
    aug.add_argument("--manifest", type=Path, help="default: OUT_DIR/manifest.jsonl")
    aug.add_argument("--debug-dir", type=Path, help="write label images and segment reports")
    aug.set_defaults(func=cmd_augment)

    ev = sub.add_parser("eval", help="NAR and Recall@K for a run file")
    ev.add_argument("run_file", type=Path)
    ev.add_argument("rel_file", type=Path)
    ev.add_argument("--config", type=Path)
    ev.add_argument("--ks", type=_ks, default=[1, 8])
    ev.add_argument("--recall-mode", choices=["hit", "fraction"], default="hit")
    ev.add_argument("--missing-policy", choices=["error", "pessimistic"], default="pessimistic")
    ev.set_defaults(func=cmd_eval)

    lc = sub.add_parser("loss-check", help="smooth-AP loss, gradient and finite-difference check")
    lc.add_argument("batch_file", type=Path)
    lc.add_argument("--config", type=Path)
    lc.add_argument("--tau", type=_positive_float, default=DEFAULT_TAU)
    lc.add_argument("--h", type=_positive_float, default=1e-5)
    lc.set_defaults(func=cmd_loss_check)

    sb = sub.add_parser("sample-batches", help="draw mini-batch specs from a similarity manifest")
    sb.add_argument("manifest_file", type=Path)
    common(sb)
    sb.add_argument("--batch-size", type=_positive_int, default=256)
    sb.add_argument("--count", type=_non_negative_int, default=1)
    sb.add_argument("--out", type=Path, help="default: stdout")
    sb.set_defaults(func=cmd_sample_batches)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Override parsed flags with ``key=value`` lines from ``args.config``."""
    if getattr(args, "config", None) is None:
        return
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    actions = {a.dest: a for a in sub._actions if a.option_strings}  # noqa: SLF001
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {args.config}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        dest = key.strip().lstrip("-").replace("-", "_")
        if not sep or dest not in actions or dest in ("config", "help"):
            raise UsageError(f"{args.config}:{lineno}: unknown setting {key.strip()!r}")
        action = actions[dest]
        value = value.strip()
        try:
            converted = action.type(value) if action.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{args.config}:{lineno}: {exc}") from None
        if action.choices is not None and converted not in action.choices:
            raise UsageError(f"{args.config}:{lineno}: {value!r} not one of {list(action.choices)}")
        setattr(args, dest, converted)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return _seed(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"${SEED_ENV}={env!r} is not a valid seed") from None
    return 0


# augment -----------------------------------------------------------------------------


def discover_images(in_dir: Path) -> list[Path]:
    """Supported image files below ``in_dir`` as sorted relative paths."""
    found = [
        p.relative_to(in_dir)
        for p in in_dir.rglob("*")
        if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES
    ]
    return sorted(found, key=lambda p: p.as_posix())


def _augment_one(
    in_dir: Path, out_dir: Path, rel: Path, config: AugmentationConfig, debug_dir: Path | None
) -> tuple[str, str | None, str | None]:
    """Returns (relative path, manifest line or None, error message or None)."""
    key = rel.as_posix()
    try:
        image = load_image(in_dir / rel)
        cfg = dataclasses.replace(config, seed=hash64(config.seed, key))
        out, record = augment_image(image, cfg, source=key)
        dst = out_dir / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        save_image(out, dst)
        if debug_dir is not None:
            seg = segment_image(image, cfg.drop_bits, cfg.connectivity)
            stem = debug_dir / rel
            stem.parent.mkdir(parents=True, exist_ok=True)
            save_image(render_labels(seg), stem.with_suffix(".labels.png"))
            stem.with_suffix(".segments.txt").write_text(segment_report(seg), encoding="utf-8")
        return key, manifest_line(key, key, record), None
    except (ImageError, ValueError, OSError) as exc:
        return key, None, f"{type(exc).__name__}: {exc}"


def cmd_augment(args) -> int:
    in_dir: Path = args.in_dir
    if not in_dir.is_dir():
        raise UsageError(f"input directory {in_dir} is not readable")
    transforms = args.transforms if args.transforms is not None else PRESETS[args.preset]
    try:
        config = AugmentationConfig(
            n_policy=args.n_policy,
            p=args.p,
            transforms=transforms,
            seed=_resolve_seed(args),
            min_area=args.min_area,
            drop_bits=args.drop_bits,
            connectivity=args.connectivity,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {args.out_dir}: {exc}") from None

    files = discover_images(in_dir)
    tasks = [(in_dir, args.out_dir, rel, config, args.debug_dir) for rel in files]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_augment_one, *zip(*tasks), chunksize=4))
    else:
        results = [_augment_one(*t) for t in tasks]

    lines, failures = [], 0
    for key, line, error in results:
        if error is not None:
            failures += 1
            log.error("%s: %s", key, error)
        else:
            lines.append(line)
    manifest = args.manifest or args.out_dir / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    log.info("augmented %d of %d images (%d failed)", len(lines), len(files), failures)
    print(f"processed={len(lines)} failed={failures} manifest={manifest}")
    return 1 if failures else 0


# eval ----------------------------------------------------------------------------------


def cmd_eval(args) -> int:
    run = load_run(args.run_file)
    rel = load_relevance(args.rel_file)
    report = evaluate(
        run, rel, ks=args.ks, missing_policy=args.missing_policy, recall_mode=args.recall_mode
    )
    if report.missing:
        log.warning("%d relevant documents missing from rankings", report.missing)
    sys.stdout.write(format_report(report))
    return 0


# loss-check ----------------------------------------------------------------------------


def read_score_batch(path: Path) -> ScoreBatch:
    scores, labels = [], []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise UsageError(f"{path}:{lineno}: expected 'score label'")
        try:
            scores.append(float(parts[0]))
            labels.append(int(parts[1]))
        except ValueError:
            raise UsageError(f"{path}:{lineno}: cannot parse {line!r}") from None
    try:
        return ScoreBatch(scores, labels)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_loss_check(args) -> int:
    batch = read_score_batch(args.batch_file)
    params = SmoothApParams(args.tau)
    loss, grad = smooth_ap_loss(batch, params)

    def f(x):
        return smooth_ap_loss(batch.with_scores(x), params)

    err = grad_check(f, batch.scores, args.h)
    print(f"loss {loss!r}")
    print(f"items {len(batch)} positives {int(batch.labels.sum())} tau {args.tau!r} h {args.h!r}")
    for i, (s, y, g) in enumerate(zip(batch.scores, batch.labels, grad)):
        print(f"grad[{i}] score={s!r} label={int(y)} d_loss={g!r}")
    ok = err < GRAD_TOLERANCE
    print(f"max_rel_error {err:.3e} tolerance {GRAD_TOLERANCE:.0e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# sample-batches ------------------------------------------------------------------------


def cmd_sample_batches(args) -> int:
    manifest = load_manifest(args.manifest_file)
    rng = np.random.Generator(np.random.PCG64(_resolve_seed(args)))
    lines = [format_batch(sample_batch(manifest, args.batch_size, rng)) for _ in range(args.count)]
    text = "".join(line + "\n" for line in lines)
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _apply_config_file(parser, args)
        return args.func(args)
    except UsageError as exc:
        print(f"segaug: error: {exc}", file=sys.stderr)
        return 2
    except (EvaluationError, SamplerError, NonFiniteError, ImageError, OSError) as exc:
        print(f"segaug: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
