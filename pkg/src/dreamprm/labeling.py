"""Monte-Carlo process supervision: per-prefix soft labels plus filtering.

A prefix's label p_i is the fraction of rollout completions that reach a
correct final answer.  Labels are kept as the raw ratio (a multiple of
1/num_rollouts); the training loss regresses scores against them
directly.  Questions whose labels are all 0 or all 1 carry no gradient
signal worth the rollout budget and can be dropped by the dynamic filter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .simulator import (
    SCHEMA_VERSION,
    Completer,
    Domain,
    Question,
    Step,
    complete_from_prefix,
    derive_seed,
    domain_tag,
    true_correctness_prob,
)


@dataclass
class LabeledPrefix:
    question_id: str
    domain: str
    traj_index: int
    prefix_len: int
    features: np.ndarray  # (prefix_len, feature_dim)
    p: float
    num_rollouts: int

    def __post_init__(self):
        if not 1 <= self.prefix_len:
            raise ValueError("prefix_len is 1-based")
        if self.features.shape[0] != self.prefix_len:
            raise ValueError("feature rows must match prefix_len")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        count = self.p * self.num_rollouts
        if abs(count - round(count)) > 1e-9:
            raise ValueError("p must be a multiple of 1/num_rollouts")


def _rollout_correct(
    completer: Completer, question: Question, prefix: list[Step], seed: int
) -> bool:
    """Recorded outcome of one completion attempt from a prefix.

    A full-length prefix needs no new steps; the outcome is drawn from the
    same law either way.
    """
    spec = completer.spec
    if len(prefix) < spec.steps_per_trajectory:
        return complete_from_prefix(completer, question, prefix, seed).final_correct
    rng = np.random.default_rng(derive_seed(seed))
    p = 1.0 if question.easy else true_correctness_prob(completer, prefix)
    correct = bool(rng.random() < p)
    if spec.label_noise > 0.0 and rng.random() < spec.label_noise:
        correct = not correct
    return correct


def monte_carlo_label(
    completer: Completer,
    question: Question,
    prefix: list[Step],
    num_rollouts: int,
    seed: int,
    traj_index: int = 0,
) -> LabeledPrefix:
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be >= 1")
    if not prefix:
        raise ValueError("prefix must contain at least one step")
    correct = sum(
        _rollout_correct(completer, question, prefix, derive_seed(seed, r))
        for r in range(num_rollouts)
    )
    return LabeledPrefix(
        question_id=question.question_id,
        domain=question.domain,
        traj_index=traj_index,
        prefix_len=len(prefix),
        features=np.stack([s.features for s in prefix]),
        p=correct / num_rollouts,
        num_rollouts=num_rollouts,
    )


def label_dataset(domain: Domain, num_rollouts: int, seed: int) -> list[LabeledPrefix]:
    """One label per (trajectory, step index) over the whole domain."""
    completer = Completer(domain.spec)
    tag = domain_tag(domain.name)
    labels = []
    for qi, (question, trajs) in enumerate(domain.items):
        for tj, traj in enumerate(trajs):
            for i in range(1, len(traj.steps) + 1):
                label_seed = derive_seed(seed, tag, qi, tj, i)
                labels.append(
                    monte_carlo_label(
                        completer, question, traj.steps[:i], num_rollouts, label_seed, tj
                    )
                )
    return labels


def dynamic_filter(labels_for_question: list[LabeledPrefix]) -> bool:
    """Keep a question unless its labels are uniformly 0 or uniformly 1."""
    if not labels_for_question:
        raise ValueError("dynamic_filter needs at least one label")
    values = {lp.p for lp in labels_for_question}
    if values == {0.0} or values == {1.0}:
        return False
    return True


def group_by_question(labels: list[LabeledPrefix]) -> dict[str, list[LabeledPrefix]]:
    grouped: dict[str, list[LabeledPrefix]] = {}
    for lp in labels:
        grouped.setdefault(lp.question_id, []).append(lp)
    return grouped


def apply_dynamic_filter(labels: list[LabeledPrefix]) -> list[LabeledPrefix]:
    grouped = group_by_question(labels)
    kept = {qid for qid, lps in grouped.items() if dynamic_filter(lps)}
    return [lp for lp in labels if lp.question_id in kept]


def write_labels_jsonl(
    labels: list[LabeledPrefix], path: str | Path, domain: str, seed: int, num_rollouts: int
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "v": SCHEMA_VERSION,
            "kind": "labels_header",
            "domain": domain,
            "seed": seed,
            "num_rollouts": num_rollouts,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for lp in labels:
            rec = {
                "v": SCHEMA_VERSION,
                "kind": "labeled_prefix",
                "question_id": lp.question_id,
                "domain": lp.domain,
                "traj_index": lp.traj_index,
                "prefix_len": lp.prefix_len,
                "features": [[float(x) for x in row] for row in lp.features],
                "p": lp.p,
                "num_rollouts": lp.num_rollouts,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_labels_jsonl(path: str | Path) -> tuple[list[LabeledPrefix], dict]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "labels_header":
        raise ValueError(f"{path}: missing labels header line")
    header = lines[0]
    if header.get("v") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {header.get('v')}")
    labels = []
    for rec in lines[1:]:
        if rec.get("kind") != "labeled_prefix":
            raise ValueError(f"{path}: unexpected record kind {rec.get('kind')}")
        labels.append(
            LabeledPrefix(
                question_id=rec["question_id"],
                domain=rec["domain"],
                traj_index=rec["traj_index"],
                prefix_len=rec["prefix_len"],
                features=np.array(rec["features"], dtype=float),
                p=rec["p"],
                num_rollouts=rec["num_rollouts"],
            )
        )
    return labels, header
