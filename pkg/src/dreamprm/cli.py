"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 missing artifact.  A run is fully determined by (config file, seed,
variant); the seed can also come from DREAMPRM_SEED, with the explicit
flag taking precedence over the environment over the file.
"""

from __future__ import annotations

import argparse
import sys

from .config import (
    ConfigError,
    ExperimentConfig,
    VARIANTS,
    load_config,
    resolve,
)
from .pipeline import STAGES, MissingArtifactError, run_pipeline
from .training import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_MISSING = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dreamprm",
        description="Domain-reweighted process reward model training on a "
        "synthetic reasoning benchmark",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML or JSON config file")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument(
        "--variant", choices=VARIANTS, help="training variant override"
    )
    common.add_argument("--out", metavar="DIR", help="run directory override")

    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    all_p = sub.add_parser("all", parents=[common], help="run the full pipeline")
    all_p.add_argument(
        "--stages",
        metavar="LIST",
        help=f"comma-separated subset of {','.join(STAGES)}",
    )
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return resolve(config, seed=args.seed, variant=args.variant, out_dir=args.out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "all":
            stages = None
            if args.stages:
                stages = [s.strip() for s in args.stages.split(",") if s.strip()]
                unknown = [s for s in stages if s not in STAGES]
                if unknown:
                    raise ConfigError(
                        [f"--stages: unknown stage '{s}'" for s in unknown]
                    )
        else:
            stages = [args.command]
        root = run_pipeline(config, stages=stages)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("partial artifacts preserved", file=sys.stderr)
        return EXIT_DIVERGENCE
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    ran = ",".join(stages) if stages else "all stages"
    print(f"done ({ran}) -> {root} [variant={config.variant} seed={config.seed}]")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
