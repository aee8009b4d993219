#!/usr/bin/env python3
"""Multi-seed comparison of training variants on the default mixture.

Runs each requested variant over a seed sweep (sharing the simulate and
label artifacts per seed is deliberately NOT done: each run directory is
self-contained and reproducible from its manifest alone), then prints
mean select@8 / pass@1 per variant and the paired DreamPRM-vs-vanilla
gap.  This is the experiment behind the headline comparison figures.

Usage:
    python scripts/compare_variants.py --seeds 0 1 2 3 4 --out runs/compare
    python scripts/compare_variants.py --variants dreamprm vanilla --seeds 0 1
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from dreamprm.config import ExperimentConfig, VARIANTS, load_config, resolve
from dreamprm.pipeline import eval_report_path, run_pipeline
from dreamprm.selection import paired_bootstrap_gap, report_from_json


def select_wins(report, k=8):
    wins = []
    for rec in report.per_question:
        idx = rec["select"][str(k)]
        wins.append(bool(rec["correct"][idx]))
    return wins


def pass1_wins(report):
    return [bool(rec["correct"][0]) for rec in report.per_question]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="base experiment file (default: built-in)")
    ap.add_argument("--variants", nargs="+", default=["dreamprm", "vanilla"],
                    choices=VARIANTS)
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else ExperimentConfig()
    reports = {}
    for variant in args.variants:
        for seed in args.seeds:
            out = Path(args.out) / f"{variant}_seed{seed}"
            config = resolve(base, seed=seed, variant=variant, out_dir=str(out))
            print(f"[{variant} seed={seed}] -> {out}")
            run_pipeline(config)
            reports[variant, seed] = report_from_json(eval_report_path(config))

    print("\nmean accuracy over seeds:")
    print(f"  {'variant':12s} {'pass@1':>8s} {'select@8':>9s}")
    for variant in args.variants:
        p1 = np.mean([reports[variant, s].accuracy["pass"][1] for s in args.seeds])
        s8 = np.mean([reports[variant, s].accuracy["select"][8] for s in args.seeds])
        print(f"  {variant:12s} {p1:8.3f} {s8:9.3f}")

    if "dreamprm" in args.variants and "vanilla" in args.variants:
        gaps = []
        for seed in args.seeds:
            a = np.mean(select_wins(reports["dreamprm", seed]))
            b = np.mean(select_wins(reports["vanilla", seed]))
            gaps.append(a - b)
        wins = sum(g > 0 for g in gaps)
        print(f"\ndreamprm - vanilla select@8 per seed: "
              + " ".join(f"{g:+.3f}" for g in gaps))
        print(f"dreamprm ahead in {wins}/{len(gaps)} seeds, mean gap {np.mean(gaps):+.3f}")

    if "dreamprm" in args.variants:
        pooled_sel, pooled_p1 = [], []
        for seed in args.seeds:
            pooled_sel += select_wins(reports["dreamprm", seed])
            pooled_p1 += pass1_wins(reports["dreamprm", seed])
        gap, p = paired_bootstrap_gap(pooled_sel, pooled_p1)
        print(f"\ndreamprm select@8 - pass@1 (pooled): {gap:+.3f}, "
              f"P(gap<=0) = {p:.4f} over bootstrap resamples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
