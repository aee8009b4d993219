"""Test-time scaling: best-of-N selection and its baselines.

All methods are evaluated on identical candidate sets per question, so
method-to-method deltas are never sampling artifacts.  Selection is
argmax of the aggregated (log-odds sum) trajectory score; baselines are
majority voting over answer ids and final-prefix-only scoring.  pass@k
is tracked as the ceiling any selector can reach.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .params import ParamVector
from .prm import PRMConfig, aggregate, score_trajectory
from .simulator import Domain, Trajectory

EVAL_KS = (1, 2, 4, 6, 8)
REPORT_VERSION = 1

# a scorer maps one candidate trajectory to its per-step scores
StepScorer = Callable[[Trajectory], np.ndarray]


@dataclass
class CandidateSet:
    question_id: str
    candidates: list[Trajectory]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("candidate set must be nonempty")
        if any(t.question_id != self.question_id for t in self.candidates):
            raise ValueError("all candidates must answer the same question")

    @property
    def answers(self) -> list[int]:
        return [t.answer_id for t in self.candidates]

    @property
    def correct_flags(self) -> list[bool]:
        return [t.truly_correct for t in self.candidates]


def candidate_sets_from_domain(domain: Domain) -> list[CandidateSet]:
    return [
        CandidateSet(question.question_id, list(trajs))
        for question, trajs in domain.items
    ]


def prm_scorer(params: ParamVector, config: PRMConfig) -> StepScorer:
    return lambda traj: score_trajectory(params, traj, config)


def oracle_scorer(good: float = 0.9, bad: float = 0.1) -> StepScorer:
    """Perfect ranking reference: flat high scores on correct candidates."""

    def scorer(traj: Trajectory) -> np.ndarray:
        v = good if traj.truly_correct else bad
        return np.full(len(traj.steps), v)

    return scorer


def best_of_n(scorer: StepScorer, cset: CandidateSet, k: int) -> int:
    """Index of the highest aggregated score among the first k candidates."""
    if not 1 <= k <= len(cset.candidates):
        raise ValueError(f"k={k} outside 1..{len(cset.candidates)}")
    scores = [aggregate(scorer(t)) for t in cset.candidates[:k]]
    return int(np.argmax(scores))  # argmax takes the lowest index on ties


def self_consistency(cset: CandidateSet, k: int) -> int:
    """Most frequent answer among the first k; ties go to the earliest."""
    if not 1 <= k <= len(cset.candidates):
        raise ValueError(f"k={k} outside 1..{len(cset.candidates)}")
    answers = cset.answers[:k]
    counts: dict[int, int] = {}
    for a in answers:
        counts[a] = counts.get(a, 0) + 1
    best = answers[0]
    for a in counts:  # insertion order = first-occurrence order
        if counts[a] > counts[best]:
            best = a
    return best


def orm_select(scorer: StepScorer, cset: CandidateSet, k: int) -> int:
    """Argmax of the final-prefix score only (outcome-style reranking)."""
    if not 1 <= k <= len(cset.candidates):
        raise ValueError(f"k={k} outside 1..{len(cset.candidates)}")
    scores = [float(scorer(t)[-1]) for t in cset.candidates[:k]]
    return int(np.argmax(scores))


@dataclass
class EvalReport:
    num_questions: int
    ks: list[int]
    accuracy: dict[str, dict[int, float]]  # method -> k -> accuracy
    per_question: list[dict] = field(default_factory=list)

    def method(self, name: str) -> dict[int, float]:
        return self.accuracy[name]

    @property
    def pass_at_1(self) -> float:
        return self.accuracy["pass"][1]


def evaluate(
    scorer: StepScorer,
    candidate_sets: Sequence[CandidateSet],
    orm_scorer: StepScorer | None = None,
    ks: Sequence[int] = EVAL_KS,
) -> EvalReport:
    """All metrics over shared candidate sets; deterministic, no sampling.

    `orm_scorer` defaults to the main scorer restricted to final prefixes.
    """
    if not candidate_sets:
        raise ValueError("need at least one candidate set")
    n_min = min(len(c.candidates) for c in candidate_sets)
    ks = [k for k in ks if k <= n_min]
    orm = orm_scorer if orm_scorer is not None else scorer

    methods = ("pass", "select", "self_consistency", "orm")
    hits = {m: {k: 0 for k in ks} for m in methods}
    per_question = []
    for cset in candidate_sets:
        flags = cset.correct_flags
        rec = {
            "question_id": cset.question_id,
            "correct": [bool(f) for f in flags],
            "select": {},
            "orm": {},
            "self_consistency": {},
        }
        for k in ks:
            hits["pass"][k] += any(flags[:k])
            si = best_of_n(scorer, cset, k)
            hits["select"][k] += flags[si]
            rec["select"][str(k)] = si
            oi = orm_select(orm, cset, k)
            hits["orm"][k] += flags[oi]
            rec["orm"][str(k)] = oi
            ans = self_consistency(cset, k)
            hits["self_consistency"][k] += ans == 0
            rec["self_consistency"][str(k)] = ans
        per_question.append(rec)

    Q = len(candidate_sets)
    accuracy = {m: {k: hits[m][k] / Q for k in ks} for m in methods}
    return EvalReport(Q, list(ks), accuracy, per_question)


def evaluate_params(
    params: ParamVector,
    candidate_sets: Sequence[CandidateSet],
    config: PRMConfig,
    orm_params: ParamVector | None = None,
    ks: Sequence[int] = EVAL_KS,
) -> EvalReport:
    orm = prm_scorer(orm_params, config) if orm_params is not None else None
    return evaluate(prm_scorer(params, config), candidate_sets, orm, ks)


def report_to_json(report: EvalReport, path: str | Path) -> None:
    """Canonical serialization: sorted keys, stable float repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "v": REPORT_VERSION,
        "kind": "eval_report",
        "num_questions": report.num_questions,
        "ks": report.ks,
        "accuracy": {
            m: {str(k): report.accuracy[m][k] for k in report.ks}
            for m in report.accuracy
        },
        "per_question": report.per_question,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def report_from_json(path: str | Path) -> EvalReport:
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "eval_report" or payload.get("v") != REPORT_VERSION:
        raise ValueError(f"{path}: not a recognized evaluation report")
    accuracy = {
        m: {int(k): v for k, v in d.items()} for m, d in payload["accuracy"].items()
    }
    return EvalReport(
        payload["num_questions"], payload["ks"], accuracy, payload["per_question"]
    )


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    """Flat accuracy table: one row per method and candidate budget."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "accuracy"])
        for m in sorted(report.accuracy):
            for k in report.ks:
                w.writerow([m, k, repr(report.accuracy[m][k])])


def paired_bootstrap_gap(
    wins_a: Sequence[bool],
    wins_b: Sequence[bool],
    num_resamples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean accuracy gap (a - b) and the fraction of bootstrap resamples
    with gap <= 0 (one-sided p-value against 'a beats b')."""
    a = np.asarray(wins_a, dtype=float)
    b = np.asarray(wins_b, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need two equal-length nonempty outcome vectors")
    rng = np.random.default_rng(seed)
    n = a.size
    idx = rng.integers(0, n, size=(num_resamples, n))
    gaps = (a[idx] - b[idx]).mean(axis=1)
    return float(a.mean() - b.mean()), float(np.mean(gaps <= 0.0))
