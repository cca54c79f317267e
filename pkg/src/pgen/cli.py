"""Command line entry point: ``pgen {preprocess,train,generate,evaluate}``.

Exit codes: 0 on success, 1 on a runtime failure (bad data, I/O), 2 on a
configuration problem (missing file, unknown key, wrongly typed value).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as cfg
from .errors import ConfigError, PgenError, UnknownPlugin

COMMANDS = ("preprocess", "train", "generate", "evaluate")
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgen", description="Train and decode sequence generation models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value; repeatable, later ones win")
        sp.add_argument("--dump-config", action="store_true", help="print the merged config and exit")
    return p


def _setup_logging() -> None:
    level = os.environ.get("PGEN_LOG", "error").lower()
    if level not in _LEVELS:
        raise ConfigError(f"PGEN_LOG must be one of {sorted(_LEVELS)}, got {level!r}")
    logging.basicConfig(level=_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        config = cfg.load(args.config)
        for assignment in args.set:
            cfg.apply_override(config, assignment)
        if args.dump_config:
            sys.stdout.write(cfg.dump(config))
            return 0
        from .task import Task

        task = Task(config)
        result = getattr(task, args.command)()
        if args.command == "train":
            print(f"stopped: {result.stop_reason} at step {result.state.step}")
        elif args.command == "generate":
            print(f"wrote {len(result)} lines to {config['generate']['output']}")
        elif args.command == "evaluate":
            print(result.to_json())
        return 0
    except (ConfigError, UnknownPlugin) as e:
        print(f"pgen: config error: {e}", file=sys.stderr)
        return 2
    except (PgenError, OSError) as e:
        print(f"pgen: error: {e}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
