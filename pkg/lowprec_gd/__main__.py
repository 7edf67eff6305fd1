"""
lpgd - gradient descent experiments in emulated low-precision arithmetic.

Usage:
    lpgd round-demo                          # stagnation example, RN vs SR
    lpgd quadratic --paper-preset setting1-sr
    lpgd mlr --format binary8 --mode-sub ssr_eps:0.1 --t 0.1 --iters 150
    lpgd eval-bounds results/setting1-sr/aggregate.csv --L 1 --t 1e-5 --format bfloat16
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from . import harness
from .config import ExperimentConfig, config_path, load_config
from .errors import (
    ConfigError,
    DataError,
    DivisionByZero,
    FormatOverflowError,
    NonFiniteGradient,
)
from .presets import get_preset, preset_names
from .softfloat import FloatFormat

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# flag dest -> config key
_OVERRIDES = {
    "format": "format",
    "mode_grad": "mode_grad",
    "mode_mul": "mode_mul",
    "mode_sub": "mode_sub",
    "t": "t",
    "eps": "eps",
    "iters": "iters",
    "reps": "reps",
    "seed": "seed",
    "scale": "scale",
    "out": "out",
    "workers": "workers",
    "data_root": "data_root",
    "setting": "setting",
    "dimension": "dimension",
}


def setup_logging(debug: bool = False) -> None:
    """Configures the root logger."""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stdout,
        force=True,
    )


def _experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Path to a JSON config file (default: $LPGD_CONFIG or config.json)")
    parser.add_argument(
        "--paper-preset", "--preset", dest="preset", help="Start from a named preset instead of the config file"
    )
    parser.add_argument("--format", help="Format name: binary8, bfloat16, binary16, binary32")
    parser.add_argument("--mode-grad", help="Rounding mode of the gradient evaluation (e.g. rn, sr, sr_eps:0.1)")
    parser.add_argument("--mode-mul", help="Rounding mode of the stepsize multiply")
    parser.add_argument("--mode-sub", help="Rounding mode of the subtract step (e.g. ssr_eps:0.1)")
    parser.add_argument("--t", type=float, help="Stepsize")
    parser.add_argument("--eps", type=float, help="Default epsilon for bare sr_eps/ssr_eps")
    parser.add_argument("--iters", type=int, help="Iterations (epochs for mlr/nn)")
    parser.add_argument("--reps", type=int, help="Number of seeded runs (default 20)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--scale", type=float, help="Fraction of the dataset or dimension to use, in (0, 1]")
    parser.add_argument("--out", help="Output directory (default: results)")
    parser.add_argument("--workers", type=int, help="Run repetitions in this many processes")
    parser.add_argument("--data-root", help="MNIST directory (default: $LPGD_DATA_ROOT)")
    parser.add_argument("--debug-shadow", action="store_true", default=None, help="Trace working-precision shadow errors")
    parser.add_argument("--bounds", action="store_true", default=None, help="Add bound columns (quadratics)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpgd",
        description="Gradient descent in emulated low-precision floating point",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Presets: " + ", ".join(preset_names()),
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    demo = subparsers.add_parser("round-demo", help="Stagnation example under RN and SR, plus rounding statistics")
    _experiment_flags(demo)

    quadratic = subparsers.add_parser("quadratic", help="Quadratic benchmark problems")
    _experiment_flags(quadratic)
    quadratic.add_argument("--setting", help="I, II or stagnation")
    quadratic.add_argument("--dimension", type=int, help="Problem dimension (default 1000 x scale)")

    for name, text in (("mlr", "Multinomial logistic regression on MNIST"), ("nn", "Two-layer network, MNIST 3 vs 8")):
        _experiment_flags(subparsers.add_parser(name, help=text))

    bounds = subparsers.add_parser("eval-bounds", help="Append bound columns to a trace CSV")
    bounds.add_argument("csv", help="Trace or aggregate CSV")
    bounds.add_argument("--output", help="Where to write (default: overwrite the input)")
    bounds.add_argument("--L", type=float, required=True, help="Lipschitz constant of the gradient")
    bounds.add_argument("--t", type=float, required=True, help="Stepsize")
    bounds.add_argument("--format", default="binary32", help="Format whose unit roundoff is used")
    bounds.add_argument("--u", type=float, help="Unit roundoff (overrides --format)")
    bounds.add_argument("--c", type=float, default=0.0, help="Gradient error constant")
    bounds.add_argument("--a", type=float, default=0.25, help="Bound parameter a")
    bounds.add_argument("--eps", type=float, default=0.0, help="SR_eps epsilon")
    bounds.add_argument("--n", type=int, default=1, help="Problem dimension")
    bounds.add_argument("--dist0-sq", type=float, help="||x0 - x*||^2 (default: from the distance column)")
    bounds.add_argument("--chi", type=float, help="chi (default: measured)")
    bounds.add_argument("--zeta", type=float, help="zeta (default: measured)")
    return parser


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset or config file first, then explicit flags on top."""
    experiment = args.command
    if args.preset:
        data: Dict[str, Any] = get_preset(args.preset)
        if data["experiment"] != experiment:
            raise ConfigError(
                f"preset '{args.preset}' is a {data['experiment']} experiment, not {experiment}",
                key="preset",
            )
        cfg = ExperimentConfig(data, experiment)
    elif args.config or os.path.exists(config_path()):
        try:
            cfg = load_config(args.config, experiment)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {e.filename}", key="config") from e
    else:
        cfg = ExperimentConfig({}, experiment)

    overrides = {key: getattr(args, dest, None) for dest, key in _OVERRIDES.items()}
    overrides["debug_shadow"] = args.debug_shadow
    overrides["bounds"] = args.bounds
    return cfg.replace(**overrides)


def _eval_bounds(args: argparse.Namespace) -> None:
    u = args.u if args.u is not None else FloatFormat.from_spec(args.format).u
    harness.evaluate_bounds(
        args.csv,
        args.output or args.csv,
        L=args.L,
        t=args.t,
        u=u,
        c=args.c,
        a=args.a,
        eps=args.eps,
        n=args.n,
        dist0_sq=args.dist0_sq,
        chi=args.chi,
        zeta=args.zeta,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``lpgd`` command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    setup_logging(args.debug)
    try:
        if args.command == "eval-bounds":
            _eval_bounds(args)
            return EXIT_OK
        cfg = experiment_config(args)
        if cfg.debug and not args.debug:
            setup_logging(True)
        logger.info("Starting %s (%s)", cfg.experiment, cfg.preset or "custom")
        ensemble = harness.run_experiment(cfg)
        logger.info("Finished %s: %d rows in %s", cfg.experiment, ensemble.length, harness.output_dir(cfg))
        return EXIT_OK
    except KeyboardInterrupt:
        logger.info("Interrupted, shutting down.")
        return EXIT_ERROR
    except ConfigError as e:
        logger.error("Configuration error (%s): %s", e.key or "?", e)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        logger.error("Data error: %s", e)
        return EXIT_DATA
    except (FormatOverflowError, NonFiniteGradient, DivisionByZero) as e:
        logger.error("Numeric error: %s", e)
        return EXIT_NUMERIC
    except Exception as e:
        logger.error("Unexpected error: %s", e, exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
