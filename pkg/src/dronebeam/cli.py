"""Command-line front end for the experiment pipeline.

Exit codes: 0 success, 2 invalid config, 3 missing/mismatched upstream
artifact, 4 runtime failure.
"""

import argparse
import sys

from .experiment import ConfigError, DependencyError, ExperimentConfig, run

_SUBCOMMANDS = {
    "generate": "synthesize the corpus and write the dataset CSVs",
    "train": "train the three predictors and three trackers",
    "evaluate": "score the trained models on the held-out split",
    "rollout": "run the feedback rollout study over held-out segments",
    "report": "merge dataset, evaluation and rollout artifacts",
    "all": "run the whole pipeline in order",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dronebeam",
        description="Beam prediction and tracking experiment pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name, help_text in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, metavar="PATH",
                       help="JSON config; defaults fill any omitted field")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory, overrides the config's out_dir")
        p.add_argument("--seed-override", type=int, default=None,
                       metavar="SEED",
                       help="replace every block seed with this value")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, out_dir=args.out,
                                    seed_override=args.seed_override)
        run(args.command, cfg, quiet=args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
