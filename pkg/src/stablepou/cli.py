"""Command-line entry point: ``stablepou <subcommand> --config ... --seed ... --workers ... --out ...``.

Exit status: 0 when every required check passes, 1 on a failed check or a
failed stage, 2 on a configuration error.
"""

import argparse
import json
import math
import os
import platform
import sys
import tempfile
import time

import numpy as np
import scipy

from . import __version__
from .config import Experiment, config_hash, load_config, parse_config
from .errors import ConfigError, StablePOUError
from .experiments import run_experiment

SUBCOMMANDS = {
    "check-model": Experiment.CHECK_MODEL,
    "w1-curve": Experiment.W1_CURVE,
    "ou-optimality": Experiment.OU_OPTIMALITY,
    "clt": Experiment.CLT_CHECK,
    "sinkhorn-selftest": Experiment.SINKHORN_SELFTEST,
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _u64(text):
    try:
        x = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= x < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return x


def _positive(text):
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if x < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return x


def build_parser():
    # argparse exits with status 2 on usage errors, matching EXIT_CONFIG
    p = argparse.ArgumentParser(prog="stablepou", description="Decreasing-step EM experiments for "
                "stable-driven piecewise OU processes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, exp in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=f"run the {exp.value} experiment")
        s.add_argument("--config", help="JSON experiment config (defaults if omitted)")
        s.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        s.add_argument("--workers", type=_positive, help="worker processes (overrides the config)")
        s.add_argument("--out", help="output directory (overrides the config)")
    return p


def _check_writable(path):
    try:
        os.makedirs(path, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path, prefix=".probe-"):
            pass
    except OSError as exc:
        raise ConfigError("output_dir", f"{path} is not writable ({exc.strerror})") from None


def _jsonable(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_manifest(cfg, outcome, out_dir, elapsed):
    manifest = {
        "experiment": cfg.experiment.value,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "workers": cfg.workers,
        "versions": {"stablepou": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "files": outcome.files,
        "passed": outcome.passed,
        "checks": [{"name": c.name, "passed": bool(c.passed), "required": c.required,
                    "value": _jsonable(c.value), "detail": c.detail} for c in outcome.checks],
        "elapsed_seconds": round(elapsed, 3),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_config(args, experiment):
    cfg = load_config(args.config) if args.config else parse_config({"experiment": experiment.value})
    if cfg.experiment is not experiment:
        raise ConfigError("experiment", f"config declares {cfg.experiment.value} but the "
                          f"subcommand runs {experiment.value}")
    return cfg.with_overrides(master_seed=args.seed, workers=args.workers, output_dir=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    experiment = SUBCOMMANDS[args.command]
    try:
        cfg = resolve_config(args, experiment)
        _check_writable(cfg.output_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        outcome = run_experiment(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StablePOUError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_manifest(cfg, outcome, cfg.output_dir, time.perf_counter() - start)
    for c in outcome.checks:
        tag = "PASS" if c.passed else ("FAIL" if c.required else "INFO")
        print(f"{tag:4s} {c.name}: {c.value!r} {c.detail}".rstrip())
    print(f"{'passed' if outcome.passed else 'FAILED'}: outputs in {cfg.output_dir}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
