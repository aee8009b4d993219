"""Synthetic multi-step reasoning bench with an analytic correctness law.

Stands in for a large reasoning model and its training domains.  Each
trajectory is a sequence of feature vectors with latent per-step flaw
flags; the probability that a completion from a prefix reaches a correct
final answer is exactly q0 * rho^(number of flawed prefix steps).  Because
that law is known in closed form, Monte-Carlo labels computed downstream
have a checkable ground truth.

Domain knobs model dataset-quality imbalance: flaw_rate controls how hard
questions are, label_noise corrupts the recorded correctness flags,
triviality makes a fraction of questions easy (every completion correct,
so their labels are uninformative), feature_noise_sigma blurs the step
features the scoring model sees.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

# feature layout: dim 0 flaw indicator (+noise), dim 1 step position i/n,
# remaining dims pure noise
SIGNAL_DIMS = 2


def derive_seed(*parts: int) -> int:
    """Stable child seed from non-negative integer parts."""
    for p in parts:
        if p < 0:
            raise ValueError(f"seed parts must be non-negative, got {parts}")
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def domain_tag(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class DomainSpec:
    name: str
    num_questions: int
    steps_per_trajectory: int = 5
    flaw_rate: float = 0.0
    label_noise: float = 0.0
    triviality: float = 0.0
    feature_noise_sigma: float = 0.5
    base_solve_prob: float = 0.9
    flaw_decay: float = 0.5
    feature_dim: int = 8
    trajectories_per_question: int = 8

    def __post_init__(self):
        if self.num_questions < 1:
            raise ValueError("num_questions must be >= 1")
        if self.steps_per_trajectory < 1:
            raise ValueError("steps_per_trajectory must be >= 1")
        for knob in ("flaw_rate", "label_noise", "triviality"):
            v = getattr(self, knob)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{knob} must lie in [0, 1], got {v}")
        if self.feature_noise_sigma < 0.0:
            raise ValueError("feature_noise_sigma must be >= 0")
        if not 0.0 < self.base_solve_prob <= 1.0:
            raise ValueError("base_solve_prob must lie in (0, 1]")
        if not 0.0 < self.flaw_decay < 1.0:
            raise ValueError("flaw_decay must lie in (0, 1)")
        if self.feature_dim < SIGNAL_DIMS:
            raise ValueError(f"feature_dim must be >= {SIGNAL_DIMS}")
        if self.trajectories_per_question < 1:
            raise ValueError("trajectories_per_question must be >= 1")


@dataclass(frozen=True)
class Step:
    features: np.ndarray  # length feature_dim, float64
    flawed: bool  # latent; visible to tests, never to the scorer
    index: int  # 1-based position in the trajectory

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise ValueError("step features must be finite")
        if self.index < 1:
            raise ValueError("step index is 1-based")


@dataclass(frozen=True)
class Question:
    question_id: str
    domain: str
    easy: bool  # latent: every completion is correct regardless of flaws


@dataclass
class Trajectory:
    question_id: str
    steps: list[Step]
    final_correct: bool  # recorded flag, possibly flipped by label noise
    answer_id: int  # 0 is the true answer; positive ids are distinct wrong answers

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory must contain at least one step")

    @property
    def truly_correct(self) -> bool:
        return self.answer_id == 0


@dataclass
class Domain:
    spec: DomainSpec
    seed: int
    items: list[tuple[Question, list[Trajectory]]] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.name

    def trajectories(self) -> list[Trajectory]:
        return [t for _, trajs in self.items for t in trajs]


class Completer:
    """Completion oracle for a domain: plays the reasoning model.

    Completions append flawless steps, so a completion's success depends
    only on the prefix it inherited: P(correct) = q0 * rho^(#flawed prefix
    steps), or 1 for easy questions.  Recorded flags are still subject to
    the domain's label noise.
    """

    def __init__(self, spec: DomainSpec):
        self.spec = spec

    @property
    def q0(self) -> float:
        return self.spec.base_solve_prob

    @property
    def rho(self) -> float:
        return self.spec.flaw_decay


def true_correctness_prob(completer: Completer, prefix: list[Step]) -> float:
    """Analytic completion-success law: q0 * rho^(#flawed steps)."""
    flaws = sum(1 for s in prefix if s.flawed)
    p = completer.q0 * completer.rho**flaws
    return float(min(max(p, 0.0), 1.0))


def _sample_step(rng: np.random.Generator, spec: DomainSpec, index: int, flawed: bool) -> Step:
    f = np.zeros(spec.feature_dim)
    f[0] = float(flawed)
    f[1] = index / spec.steps_per_trajectory
    if spec.feature_noise_sigma > 0.0:
        f[0] += rng.normal(0.0, spec.feature_noise_sigma)
        f[2:] = rng.normal(0.0, spec.feature_noise_sigma, spec.feature_dim - SIGNAL_DIMS)
    return Step(features=f, flawed=flawed, index=index)


def _record_final(rng: np.random.Generator, spec: DomainSpec, truly_correct: bool) -> tuple[bool, int]:
    recorded = truly_correct
    if spec.label_noise > 0.0 and rng.random() < spec.label_noise:
        recorded = not recorded
    answer_id = 0 if truly_correct else int(1 + rng.integers(0, 4))
    return recorded, answer_id


def _generate_trajectory(rng: np.random.Generator, spec: DomainSpec, question: Question) -> Trajectory:
    n = spec.steps_per_trajectory
    steps = []
    flaws = 0
    for i in range(1, n + 1):
        flawed = bool(rng.random() < spec.flaw_rate)
        flaws += flawed
        steps.append(_sample_step(rng, spec, i, flawed))
    if question.easy:
        truly_correct = True
    else:
        p = spec.base_solve_prob * spec.flaw_decay**flaws
        truly_correct = bool(rng.random() < p)
    recorded, answer_id = _record_final(rng, spec, truly_correct)
    return Trajectory(question.question_id, steps, recorded, answer_id)


def generate_domain(spec: DomainSpec, seed: int) -> Domain:
    """Sample a full domain: questions, each with sampled trajectories.

    Deterministic in (spec, seed); per-question seeds are derived so the
    result does not depend on generation order.
    """
    tag = domain_tag(spec.name)
    items = []
    for qi in range(spec.num_questions):
        qid = f"{spec.name}-q{qi}"
        q_rng = np.random.default_rng(derive_seed(seed, tag, qi, 0))
        question = Question(qid, spec.name, easy=bool(q_rng.random() < spec.triviality))
        trajs = []
        for tj in range(spec.trajectories_per_question):
            t_rng = np.random.default_rng(derive_seed(seed, tag, qi, 1, tj))
            trajs.append(_generate_trajectory(t_rng, spec, question))
        items.append((question, trajs))
    return Domain(spec=spec, seed=seed, items=items)


def complete_from_prefix(
    completer: Completer, question: Question, prefix: list[Step], seed: int
) -> Trajectory:
    """One rollout: extend a prefix to full length and draw the outcome."""
    spec = completer.spec
    n = spec.steps_per_trajectory
    if len(prefix) >= n:
        raise ValueError(f"prefix already has {len(prefix)} of {n} steps")
    rng = np.random.default_rng(derive_seed(seed))
    steps = list(prefix)
    for i in range(len(prefix) + 1, n + 1):
        steps.append(_sample_step(rng, spec, i, flawed=False))
    p = 1.0 if question.easy else true_correctness_prob(completer, prefix)
    truly_correct = bool(rng.random() < p)
    recorded, answer_id = _record_final(rng, spec, truly_correct)
    return Trajectory(question.question_id, steps, recorded, answer_id)


def _spec_to_dict(spec: DomainSpec) -> dict:
    return {
        "name": spec.name,
        "num_questions": spec.num_questions,
        "steps_per_trajectory": spec.steps_per_trajectory,
        "flaw_rate": spec.flaw_rate,
        "label_noise": spec.label_noise,
        "triviality": spec.triviality,
        "feature_noise_sigma": spec.feature_noise_sigma,
        "base_solve_prob": spec.base_solve_prob,
        "flaw_decay": spec.flaw_decay,
        "feature_dim": spec.feature_dim,
        "trajectories_per_question": spec.trajectories_per_question,
    }


def spec_from_dict(d: dict) -> DomainSpec:
    return DomainSpec(**d)


def write_domain_jsonl(domain: Domain, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "v": SCHEMA_VERSION,
            "kind": "domain_header",
            "seed": domain.seed,
            "spec": _spec_to_dict(domain.spec),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for question, trajs in domain.items:
            for traj in trajs:
                rec = {
                    "v": SCHEMA_VERSION,
                    "kind": "trajectory",
                    "question_id": question.question_id,
                    "domain": question.domain,
                    "easy": question.easy,
                    "final_correct": traj.final_correct,
                    "answer_id": traj.answer_id,
                    "steps": [
                        {
                            "index": s.index,
                            "flawed": s.flawed,
                            "features": [float(x) for x in s.features],
                        }
                        for s in traj.steps
                    ],
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_domain_jsonl(path: str | Path) -> Domain:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "domain_header":
        raise ValueError(f"{path}: missing domain header line")
    header = lines[0]
    if header.get("v") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {header.get('v')}")
    spec = spec_from_dict(header["spec"])
    by_question: dict[str, tuple[Question, list[Trajectory]]] = {}
    for rec in lines[1:]:
        if rec.get("kind") != "trajectory":
            raise ValueError(f"{path}: unexpected record kind {rec.get('kind')}")
        qid = rec["question_id"]
        if qid not in by_question:
            by_question[qid] = (Question(qid, rec["domain"], rec["easy"]), [])
        steps = [
            Step(
                features=np.array(s["features"], dtype=float),
                flawed=s["flawed"],
                index=s["index"],
            )
            for s in rec["steps"]
        ]
        by_question[qid][1].append(
            Trajectory(qid, steps, rec["final_correct"], rec["answer_id"])
        )
    return Domain(spec=spec, seed=header["seed"], items=list(by_question.values()))


def clean_variant(spec: DomainSpec, name: str | None = None) -> DomainSpec:
    """Same generative process with all corruption knobs switched off."""
    return replace(
        spec,
        name=name or spec.name,
        label_noise=0.0,
        triviality=0.0,
    )
