"""Plot-data emission: final weights, training curves, accuracy vs k.

CSV files are the contract; the SVGs next to them are self-contained
conveniences rendered with a pinned hash salt and no embedded dates, so
rerunning a pipeline reproduces them byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt

from .config import (
    ROLE_INFORMATIVE,
    ROLE_NOISY,
    ROLE_TRIVIAL,
    ExperimentConfig,
    domain_roles,
)
from .selection import EvalReport, report_from_json
from .training import TrainHistory

matplotlib.rcParams["svg.hashsalt"] = "dreamprm"

_ROLE_COLORS = {
    ROLE_INFORMATIVE: "#2a7fff",
    ROLE_NOISY: "#ff8c42",
    ROLE_TRIVIAL: "#999999",
}

_METHOD_STYLES = {
    "pass": dict(color="#bbbbbb", linestyle="--", marker="."),
    "select": dict(color="#2a7fff", linestyle="-", marker="o"),
    "self_consistency": dict(color="#2ca02c", linestyle="-", marker="s"),
    "orm": dict(color="#ff8c42", linestyle="-", marker="^"),
}


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_alpha_bar(
    config: ExperimentConfig, history: TrainHistory, out_dir: Path
) -> list[Path]:
    roles = domain_roles(config)
    names = history.domain_names
    final = history.final_alpha()
    csv_path = out_dir / "alpha_bar.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "role", "alpha"])
        for name, a in zip(names, final):
            w.writerow([name, roles.get(name, ROLE_INFORMATIVE), repr(float(a))])

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    colors = [_ROLE_COLORS[roles.get(n, ROLE_INFORMATIVE)] for n in names]
    ax.bar(range(len(names)), final, color=colors)
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle=":")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("final domain weight")
    ax.set_title("Learned domain weights")
    fig.tight_layout()
    svg_path = out_dir / "alpha_bar.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def write_trajectory(history: TrainHistory, out_dir: Path) -> list[Path]:
    names = history.domain_names
    csv_path = out_dir / "trajectory.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["iteration", "inner_loss", "meta_loss"]
            + [f"alpha_{n}" for n in names]
            + ["lr"]
        )
        for r in history.rows:
            meta = "" if r.meta_loss != r.meta_loss else repr(r.meta_loss)
            w.writerow(
                [r.iteration, repr(r.inner_loss), meta]
                + [repr(a) for a in r.alpha]
                + [repr(r.lr)]
            )

    iters = [r.iteration for r in history.rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.5, 5.0), sharex=True)
    ax1.plot(iters, [r.inner_loss for r in history.rows], label="inner loss", color="#2a7fff")
    metas = [r.meta_loss for r in history.rows]
    if any(m == m for m in metas):
        ax1.plot(iters, metas, label="meta loss", color="#ff8c42")
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right", fontsize=8)
    alphas = history.alphas()
    for k, name in enumerate(names):
        ax2.plot(iters, alphas[:, k], label=name)
    ax2.axhline(1.0, color="black", linewidth=0.8, linestyle=":")
    ax2.set_xlabel("outer iteration")
    ax2.set_ylabel("domain weight")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    svg_path = out_dir / "trajectory.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def write_accuracy_vs_k(report: EvalReport, out_dir: Path) -> list[Path]:
    csv_path = out_dir / "accuracy_vs_k.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "accuracy"])
        for method in sorted(report.accuracy):
            for k in report.ks:
                w.writerow([method, k, repr(report.accuracy[method][k])])

    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for method in sorted(report.accuracy):
        style = _METHOD_STYLES.get(method, {})
        ax.plot(report.ks, [report.accuracy[method][k] for k in report.ks],
                label=method, **style)
    ax.set_xlabel("candidates k")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("Selection accuracy vs candidate budget")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    svg_path = out_dir / "accuracy_vs_k.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def write_report_files(
    config: ExperimentConfig,
    history: TrainHistory,
    eval_report_path: str | Path,
    out_dir: str | Path,
) -> list[Path]:
    out_dir = Path(out_dir)
    report = report_from_json(eval_report_path)
    written = []
    written += write_alpha_bar(config, history, out_dir)
    written += write_trajectory(history, out_dir)
    written += write_accuracy_vs_k(report, out_dir)
    return written
