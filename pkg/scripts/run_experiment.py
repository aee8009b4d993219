#!/usr/bin/env python3
"""Run one experiment end to end and print a one-screen summary.

Usage:
    python scripts/run_experiment.py --config configs/default.toml --seed 0
    python scripts/run_experiment.py --variant vanilla --out runs/vanilla

Equivalent to `dreamprm all` plus a human-readable digest of the final
domain weights and the accuracy table.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dreamprm.config import ExperimentConfig, domain_roles, load_config, resolve
from dreamprm.pipeline import (
    eval_report_path,
    history_path,
    run_pipeline,
)
from dreamprm.selection import report_from_json
from dreamprm.training import read_history_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="TOML or JSON experiment file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--variant")
    ap.add_argument("--out")
    args = ap.parse_args()

    config = load_config(args.config) if args.config else ExperimentConfig()
    config = resolve(config, seed=args.seed, variant=args.variant, out_dir=args.out)
    root = run_pipeline(config)

    history = read_history_csv(history_path(config), domain_names=config.domain_names())
    roles = domain_roles(config)
    print(f"\nrun: {root}  variant={config.variant}  seed={config.seed}")
    print(f"iterations: {len(history)}  final meta loss: {history.rows[-1].meta_loss:.4f}")
    print("\nfinal domain weights:")
    for name, a in zip(history.domain_names, history.final_alpha()):
        print(f"  {name:16s} {roles[name]:12s} {a:+.3f}")

    report = report_from_json(eval_report_path(config))
    print(f"\naccuracy over {report.num_questions} questions:")
    header = "  method            " + "".join(f"k={k:<7d}" for k in report.ks)
    print(header)
    for method in ("pass", "select", "self_consistency", "orm"):
        row = "".join(f"{report.accuracy[method][k]:<9.3f}" for k in report.ks)
        print(f"  {method:18s}{row}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
