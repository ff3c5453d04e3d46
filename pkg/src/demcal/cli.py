"""Command line driver.

Every subcommand except ``decode`` takes a flat config file plus optional
``--set key=value`` overrides; commands write their artifacts into the
config's output directory. Exit codes: 2 config trouble, 3 bad data,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DemcalError
from .harness import (
    cmd_check_coverage,
    cmd_decode,
    cmd_eval,
    cmd_fit,
    cmd_gen,
    cmd_sweep_cycles,
    cmd_train,
    load_config,
)
from .model import format_g17


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to a key=value config file")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    sub.add_argument("--out", help="override out_dir")
    sub.add_argument("--seed", type=int, help="override train_seed")


def _load(args: argparse.Namespace):
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["train_seed"] = str(args.seed)
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demcal")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen", help="write planted model, template, and shot split")
    _add_config_args(p)

    p = subs.add_parser("fit", help="correlation-fit parameters from training shots")
    _add_config_args(p)

    p = subs.add_parser("train", help="policy-gradient training")
    _add_config_args(p)
    p.add_argument("--toy", action="store_true", help="use the analytic quadratic reward")

    p = subs.add_parser("eval", help="score parameter files on the held-out test shots")
    _add_config_args(p)
    p.add_argument("params", nargs="*", help="parameter files to score")

    p = subs.add_parser("sweep-cycles", help="extrapolate parameters across round counts")
    _add_config_args(p)
    p.add_argument("--rounds", required=True, help="comma-separated round counts")
    p.add_argument("--params", required=True, help="parameter file to extrapolate")

    p = subs.add_parser("check-coverage", help="list target classes no sensor binds")
    _add_config_args(p)

    p = subs.add_parser("decode", help="decode a shot file against a model file")
    p.add_argument("dem", help="model file")
    p.add_argument("shots", help="shot file")
    p.add_argument("--out", help="write per-shot predicted observable bits here")

    return parser


def _run(args: argparse.Namespace) -> None:
    if args.command == "decode":
        est = cmd_decode(args.dem, args.shots, args.out)
        print(
            f"failures {est.failures} shots {est.shots} ler {format_g17(est.ler)} "
            f"ci {format_g17(est.ci_low)} {format_g17(est.ci_high)}"
        )
        return

    cfg = _load(args)
    if args.command == "gen":
        paths = cmd_gen(cfg)
        for key in sorted(paths):
            print(f"wrote {paths[key]}")
    elif args.command == "fit":
        result = cmd_fit(cfg)
        print(f"fitted {result.theta.size} parameters, {len(result.diagnostics)} floored")
    elif args.command == "train":
        result = cmd_train(cfg, toy=args.toy)
        last = result.records[-1]
        print(
            f"trained {result.mu.size} parameters over {len(result.records)} epochs, "
            f"final mean reward {format_g17(last.mean_reward)}"
        )
    elif args.command == "eval":
        result = cmd_eval(cfg, args.params)
        for name in result.estimates:
            est = result.estimates[name]
            print(
                f"{name} failures {est.failures} shots {est.shots} "
                f"ler {format_g17(est.ler)} ci {format_g17(est.ci_low)} {format_g17(est.ci_high)}"
            )
    elif args.command == "sweep-cycles":
        try:
            r_values = [int(tok) for tok in args.rounds.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --rounds list: {exc}") from exc
        result = cmd_sweep_cycles(cfg, r_values, args.params)
        for point in result.points:
            print(
                f"rounds {point.rounds} ler {format_g17(point.estimate.ler)} "
                f"eps_direct {format_g17(point.eps_direct)}"
            )
        print(f"eps_fit {format_g17(result.eps_fit)}")
    elif args.command == "check-coverage":
        missing = cmd_check_coverage(cfg)
        if missing:
            for key in missing:
                print(f"uncovered {key.serialize()}")
            raise ConfigError(f"{len(missing)} target class(es) not covered by any sensor")
        print("all target classes covered")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _run(args)
    except DemcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
