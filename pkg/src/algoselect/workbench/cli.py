"""Command-line entry point: ``algoselect <stage|pipeline> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ExperimentConfig, InvalidConfigError, WorkbenchError
from .pipeline import STAGES, Workspace, run_pipeline, run_stage

COMMANDS = STAGES + ("pipeline",)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="algoselect", description="Landscape-aware per-instance algorithm selection workbench.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (defaults apply to missing keys)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", help="output directory (default: config output_dir or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker processes; never changes results")
    p.add_argument("--desk-scale", action="store_true", help="apply the reduced desk-scale defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, desk_scale=args.desk_scale)
    else:
        cfg = ExperimentConfig.from_dict({}, desk_scale=args.desk_scale)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise InvalidConfigError("--threads must be >= 1")
        cfg = resolve_config(args)
        out = args.out or cfg.data.get("output_dir") or "out"
        ws = Workspace(out, cfg, threads=args.threads)
        if args.command == "pipeline":
            status = run_pipeline(ws)
        else:
            run_stage(ws, args.command)
            status = {args.command: "ran"}
    except WorkbenchError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}), file=sys.stderr)
        return e.code
    print(json.dumps({"status": "ok", "out": ws.out, "stages": status}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
