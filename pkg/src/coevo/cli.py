"""Command-line interface.

Subcommands: init-config, train, ablate, evaluate, export. Exit code 0 on
success; on failure a machine-readable JSON error record goes to stdout and
the exit code is non-zero. COEVO_OUTPUT_DIR overrides the configured output
directory (the only supported environment override).
"""

import argparse
import json
import sys

from .config import ABLATION_MODES, ConfigError, ENV_KINDS, ExperimentConfig
from . import harness


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coevo",
        description="Co-evolve an articulated 2D agent, its controller, and its terrain.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write a default config file")
    p.add_argument("--env-kind", choices=ENV_KINDS, default="rough_terrain")
    p.add_argument("--out", default=None, help="path to write (stdout if omitted)")

    p = sub.add_parser("train", help="run the full co-evolution experiment")
    p.add_argument("--config", required=True)

    p = sub.add_parser("ablate", help="run one ablation mode")
    p.add_argument("--mode", required=True, choices=ABLATION_MODES)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="source checkpoint for the fixed_*_final modes")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the held-out suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export", help="export CSV tables from a run directory")
    p.add_argument("--run-dir", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-config":
            cfg = ExperimentConfig.default(args.env_kind)
            text = cfg.to_json(args.out)
            if args.out is None:
                sys.stdout.write(text)
            else:
                print(json.dumps({"written": args.out}))
        elif args.command == "train":
            cfg = ExperimentConfig.from_json(args.config)
            out = harness.run_experiment(cfg)
            print(json.dumps({"run_dir": out}))
        elif args.command == "ablate":
            cfg = ExperimentConfig.from_json(args.config)
            out = harness.run_ablation(args.mode, cfg, args.checkpoint)
            print(json.dumps({"run_dir": out, "mode": args.mode}))
        elif args.command == "evaluate":
            cfg = ExperimentConfig.from_json(args.config) if args.config else None
            report = harness.evaluate_checkpoint(args.checkpoint, cfg, args.out)
            print(json.dumps(report, sort_keys=True))
        elif args.command == "export":
            curve, stages = harness.export_metrics(args.run_dir)
            print(json.dumps({"learning_curve": curve, "roughness_stages": stages}))
        return 0
    except (ConfigError, harness.HarnessError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
