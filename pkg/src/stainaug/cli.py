"""Command-line entry point: ``fit-stats``, ``normalize``, ``augment`` and ``eval``.

Defaults can come from a TOML or JSON file given with ``--config``; command
line flags override it. Exit status is 0 on success, 1 on usage errors
(including bad config keys) and 2 on data errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .augment import AugmentConfig, augment_batch
from .corpus import SCHEMA_VERSION, fit_corpus_stats, load_corpus_stats, save_corpus_stats
from .errors import StainAugError
from .imagecore import OD_EPS, OD_THRESHOLD, load_image, save_image, tissue_mask
from .metrics import RADIUS, load_annotations, report
from .reinhard import fit_reinhard_stats, reinhard_transfer
from .vahadane import CONC_LAMBDA, ITERS, LAMBDA, SEED, fit_stain_model, vahadane_normalize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")

CONFIG_DEFAULTS = {
    "lambda": LAMBDA,
    "conc_lambda": CONC_LAMBDA,
    "iters": ITERS,
    "seed": SEED,
    "p_reinhard": 0.5,
    "enlarge_factor": 1.0,
    "copies": 1,
    "geometric": True,
    "radius": RADIUS,
    "od_eps": OD_EPS,
    "od_threshold": OD_THRESHOLD,
    "threads": 0,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path) -> dict:
    """Read a TOML or JSON config file; unknown keys are a usage error."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        if str(path).endswith(".json"):
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path}: expected a table of settings")
    for key, value in data.items():
        if key not in CONFIG_DEFAULTS:
            raise UsageError(f"config {path}: unknown key {key!r}")
        expected = type(CONFIG_DEFAULTS[key])
        ok = isinstance(value, bool) if expected is bool else (
            isinstance(value, (int, float)) and not isinstance(value, bool)
            and (expected is float or isinstance(value, int)))
        if not ok:
            raise UsageError(f"config {path}: key {key!r} needs a {expected.__name__}")
    return data


def _settings(args) -> dict:
    merged = dict(CONFIG_DEFAULTS)
    if args.config:
        merged.update(load_config(args.config))
    for key in CONFIG_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["threads"] <= 0:
        merged["threads"] = os.cpu_count() or 1
    return merged


def _list_images(directory):
    if not os.path.isdir(directory):
        raise DataError(f"not a directory: {directory}")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
    if not names:
        raise DataError(f"no PNG or TIFF images in {directory}")
    return [os.path.join(directory, n) for n in names]


def _emit(payload, out=None):
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_fit_stats(args, cfg):
    paths = _list_images(args.input_dir)
    stats = fit_corpus_stats(paths, cfg["lambda"], cfg["iters"], cfg["seed"],
                             conc_lam=cfg["conc_lambda"], od_threshold=cfg["od_threshold"],
                             od_eps=cfg["od_eps"], threads=cfg["threads"])
    for image, reason in stats.skipped:
        print(f"skipped {image}: {reason}", file=sys.stderr)
    save_corpus_stats(stats, args.out)
    print(f"fitted {len(stats.per_image)} of {len(paths)} images -> {args.out}", file=sys.stderr)


def _resolve_target(target_arg, method, cfg):
    stats_path, sep, image_id = target_arg.partition("#")
    if sep:
        stats = load_corpus_stats(stats_path)
        try:
            item = stats.lookup(image_id)
        except KeyError:
            raise DataError(f"{stats_path}: no image {image_id!r}") from None
        return item.reinhard if method == "reinhard" else item.stain
    if target_arg.endswith(".json"):
        raise UsageError("a stats file target needs an image id: stats.json#<image-id>")
    target = load_image(target_arg)
    if method == "reinhard":
        return fit_reinhard_stats(target, _mask_or_none(target, cfg["od_threshold"]))
    return fit_stain_model(target, cfg["lambda"], cfg["iters"], cfg["seed"],
                           conc_lam=cfg["conc_lambda"], od_threshold=cfg["od_threshold"],
                           od_eps=cfg["od_eps"])


def _mask_or_none(image, threshold):
    mask = tissue_mask(image, threshold)
    return mask if mask.count else None


def cmd_normalize(args, cfg):
    target = _resolve_target(args.target, args.method, cfg)
    image = load_image(args.input)
    if args.method == "reinhard":
        out = reinhard_transfer(image, target, _mask_or_none(image, cfg["od_threshold"]))
    else:
        out = vahadane_normalize(image, target, cfg["lambda"], cfg["iters"], cfg["seed"],
                                 conc_lam=cfg["conc_lambda"], od_threshold=cfg["od_threshold"],
                                 od_eps=cfg["od_eps"])
    save_image(out, args.output)


def cmd_augment(args, cfg):
    stats = load_corpus_stats(args.stats)
    paths = _list_images(args.input_dir)
    if not os.path.isdir(args.out_dir):
        raise DataError(f"output directory does not exist: {args.out_dir}")
    config = AugmentConfig(
        p_reinhard=cfg["p_reinhard"], enlarge_factor=cfg["enlarge_factor"], seed=cfg["seed"],
        lam=cfg["lambda"], iters=cfg["iters"], geometric=cfg["geometric"],
        conc_lam=cfg["conc_lambda"], od_threshold=cfg["od_threshold"], od_eps=cfg["od_eps"],
    )
    rows = augment_batch(paths, stats, config, args.out_dir, cfg["copies"], cfg["threads"])
    failed = [r for r in rows if not r["output"]]
    for r in failed:
        print(f"failed {r['input']}: {json.loads(r['params_json']).get('error')}", file=sys.stderr)
    _emit({"written": len(rows) - len(failed), "failed": len(failed),
           "manifest": os.path.join(args.out_dir, "manifest.csv")})


def cmd_eval(args, cfg):
    if not cfg["radius"] > 0:
        raise UsageError("--radius must be positive")
    gt = load_annotations(args.gt, "gt")
    pred = load_annotations(args.pred, "pred")
    _emit(report(gt, pred, cfg["radius"], per_image=args.per_image), args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON file with default settings")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--lambda", dest="lambda", type=float, help="stain-matrix sparsity weight")
    solver.add_argument("--conc-lambda", dest="conc_lambda", type=float,
                        help="sparsity weight when coding pixels")
    solver.add_argument("--iters", type=int, help="dictionary iterations")
    solver.add_argument("--seed", type=int, help="random seed")
    solver.add_argument("--od-threshold", dest="od_threshold", type=float,
                        help="mean OD above which a pixel counts as tissue")
    solver.add_argument("--od-eps", dest="od_eps", type=float, help="intensity floor before log")

    parser = _Parser(prog="stainaug", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"stainaug {__version__} (stats schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("fit-stats", parents=[common, solver],
                       help="fit per-image color statistics and sampling ranges")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True, help="stats JSON to write")
    p.set_defaults(func=cmd_fit_stats)

    p = sub.add_parser("normalize", parents=[common, solver],
                       help="normalize one image to a target style")
    p.add_argument("--method", required=True, choices=["reinhard", "vahadane"])
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True, help="stats.json#<image-id> or a target image")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("augment", parents=[common, solver],
                       help="write randomly stain-augmented copies of a directory")
    p.add_argument("--stats", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--copies", type=int)
    p.add_argument("--p-reinhard", dest="p_reinhard", type=float)
    p.add_argument("--enlarge", dest="enlarge_factor", type=float)
    p.add_argument("--geometric", dest="geometric", action="store_true", default=None,
                   help="random flips/rotations (default on)")
    p.add_argument("--no-geometric", dest="geometric", action="store_false")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", parents=[common], help="score point detections")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--radius", type=float)
    p.add_argument("--per-image", action="store_true")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)
    return parser


def _check_ranges(cfg):
    if not 0 <= cfg["p_reinhard"] <= 1:
        raise UsageError("p_reinhard must lie in [0, 1]")
    if cfg["enlarge_factor"] < 0:
        raise UsageError("enlarge factor must be >= 0")
    if cfg["copies"] < 1:
        raise UsageError("copies must be >= 1")
    if cfg["iters"] < 1:
        raise UsageError("iters must be >= 1")
    if cfg["lambda"] < 0 or cfg["conc_lambda"] < 0:
        raise UsageError("lambda must be >= 0")
    if cfg["od_eps"] <= 0 or cfg["od_threshold"] < 0:
        raise UsageError("od_eps must be > 0 and od_threshold >= 0")


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _settings(args)
        _check_ranges(cfg)
        args.func(args, cfg)
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, StainAugError, OSError, ValueError) as exc:
        print(f"stainaug: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())
