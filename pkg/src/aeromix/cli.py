"""Command line driver.

    aeromix synth --config scene.cfg --out scene/
    aeromix preprocess --config run.cfg
    aeromix fuse-decision --config run.cfg --scenarios 1,3,8 --threads 2

Failures print one line ``error: <class>: <message>`` on stderr and exit
with a nonzero code (2 for missing inputs or bad configuration).
"""

import argparse
import datetime as dt
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .exceptions import AeromixError, ConfigError
from .synth import SceneConfig

COMMANDS = ("preprocess", "fuse-data", "fuse-decision", "map", "synth", "eval")


def _scenario_list(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated scenario ids, got {text!r}") from None


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="aeromix", description="Multi-sensor AOD fusion for PM2.5 estimation.")
    parser.add_argument("--version", action="version", version=f"aeromix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", type=_positive)
        if name != "synth":
            p.add_argument("--data", type=Path, help="scene directory (overrides data_dir)")
        if name == "fuse-decision":
            p.add_argument("--scenarios", type=_scenario_list)
        if name == "map":
            p.add_argument("--date", type=dt.date.fromisoformat)
            p.add_argument("--scenario", type=int)
    return parser


def _pipeline_config(args):
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.threads is not None:
        config.threads = args.threads
    if getattr(args, "data", None) is not None:
        config.data_dir = args.data
    if getattr(args, "scenarios", None):
        config.scenarios = args.scenarios
    if getattr(args, "scenario", None) is not None:
        config.map_scenario = args.scenario
    return config


def run(args):
    from . import pipeline

    if args.command == "synth":
        scene = SceneConfig.from_file(args.config) if args.config else None
        if scene is None:
            if args.seed is None:
                raise ConfigError("synth needs --config or --seed")
            scene = SceneConfig(seed=args.seed)
        elif args.seed is not None:
            scene = SceneConfig.from_mapping({**scene.to_mapping(), "seed": str(args.seed)})
        return pipeline.cmd_synth(scene, args.out or Path("scene"))
    config = _pipeline_config(args)
    if args.command == "preprocess":
        return pipeline.cmd_preprocess(config)
    if args.command == "fuse-data":
        return pipeline.cmd_fuse_data(config)
    if args.command == "fuse-decision":
        return pipeline.cmd_fuse_decision(config)
    if args.command == "map":
        return pipeline.cmd_map(config, args.date)
    return pipeline.cmd_eval(config)


def _setup_logging():
    level = os.environ.get("AEROMIX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        result = run(args)
    except AeromixError as exc:
        print(f"error: {exc.error_class}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: input-missing: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 5
    print(f"{result.command}: wrote {len(result.outputs)} file(s) to {result.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
