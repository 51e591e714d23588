"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault
(non-finite values, gimbal lock), 5 I/O or checkpoint error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, DataError, NumericFault
from . import experiments
from .config import ExperimentConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _globals(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config file")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadtcn", description="Multi-step quadrotor motion prediction.")
    _globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train the configured model and write a checkpoint")
    p = sub.add_parser("eval", parents=[common], help="per-step horizon MSE report on the test split")
    p.add_argument("--checkpoint", help="trained checkpoint (not needed for the physics model)")
    p.add_argument("--horizon", type=int, help="evaluate only the first H steps")
    p.add_argument("--baseline", action="store_true", help="also report the zero-order-hold baseline")
    p = sub.add_parser("scaling", parents=[common], help="train and time one model per layer count")
    p.add_argument("--layers", help="comma separated block counts, e.g. 5,8,10,12")
    sub.add_parser("ablate", parents=[common], help="train the six-row ablation grid")
    p = sub.add_parser("errdist", parents=[common], help="error percentiles and outlier dump")
    p.add_argument("--checkpoint", help="trained checkpoint (not needed for the physics model)")
    p = sub.add_parser("synth", parents=[common], help="write synthetic telemetry CSVs")
    p.add_argument("--n", type=int, help="number of flights (default from [data])")
    p.add_argument("--duration", type=float, help="seconds per flight (default from [data])")
    return parser


def _layers(text):
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad --layers value {text!r}") from None


def run(args) -> str:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, out=args.out)
    if args.command == "train":
        return experiments.cmd_train(cfg)
    if args.command == "eval":
        return experiments.cmd_eval(cfg, args.checkpoint, args.horizon, args.baseline)
    if args.command == "scaling":
        return experiments.cmd_scaling(cfg, _layers(args.layers) if args.layers else None)
    if args.command == "ablate":
        return experiments.cmd_ablate(cfg)
    if args.command == "errdist":
        return experiments.cmd_errdist(cfg, args.checkpoint)
    return experiments.cmd_synth(cfg, args.n, args.duration)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = run(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except DataError as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except NumericFault as exc:
        code, msg = EXIT_NUMERIC, f"numeric fault: {exc}"
    except OSError as exc:
        code, msg = EXIT_IO, f"i/o error: {exc}"
    else:
        sys.stdout.write(text)
        return EXIT_OK
    print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
