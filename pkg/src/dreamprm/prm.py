"""Step scorer, both loss levels, aggregation, and checkpointing.

The scorer is a small feed-forward network over a fixed-size prefix
encoding: mean-pooled prefix features, the current step's features, and
the normalized position, giving input width 2d+1.  Two tanh hidden
layers feed a sigmoid output, so scores live strictly in (0,1).

Lower-level training regresses step scores against Monte-Carlo labels
per domain; the upper level compares a trajectory's aggregated score
(sum of per-step log-odds, squashed by a sigmoid) against the final
correctness signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .labeling import LabeledPrefix
from .params import ParamVector
from .simulator import Step, Trajectory, derive_seed

CHECKPOINT_VERSION = 1
CLAMP_EPS = 1e-6

BLOCK_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class PRMConfig:
    feature_dim: int = 8
    hidden_dim: int = 32
    total_steps: int = 5
    clamp_eps: float = CLAMP_EPS

    @property
    def input_dim(self) -> int:
        return 2 * self.feature_dim + 1

    def block_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d, h = self.input_dim, self.hidden_dim
        return [
            ("w1", (d, h)),
            ("b1", (h,)),
            ("w2", (h, h)),
            ("b2", (h,)),
            ("w3", (h, 1)),
            ("b3", (1,)),
        ]


def init_params(config: PRMConfig, seed: int) -> ParamVector:
    """Random tanh layers, zero output layer: a fresh scorer says 0.5."""
    rng = np.random.default_rng(derive_seed(seed, 0xD6EA))
    arrays = []
    for name, shape in config.block_shapes():
        if name in ("w3", "b3") or name.startswith("b"):
            arrays.append((name, np.zeros(shape)))
        else:
            fan_in = shape[0]
            arrays.append((name, rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)))
    return ParamVector.from_blocks(arrays)


def encode_prefix(features: np.ndarray, total_steps: int) -> np.ndarray:
    """(i, d) prefix feature matrix -> fixed (2d+1,) scorer input."""
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("prefix features must be a nonempty (i, d) matrix")
    if not np.all(np.isfinite(features)):
        raise ValueError("prefix features must be finite")
    pooled = features.mean(axis=0)
    current = features[-1]
    pos = features.shape[0] / total_steps
    return np.concatenate([pooled, current, [pos]])


def encode_steps(steps: list[Step], total_steps: int) -> np.ndarray:
    return encode_prefix(np.stack([s.features for s in steps]), total_steps)


def encode_label_batch(labeled: list[LabeledPrefix], total_steps: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([encode_prefix(lp.features, total_steps) for lp in labeled])
    y = np.array([lp.p for lp in labeled])
    return X, y


def encode_trajectory(traj: Trajectory, total_steps: int) -> np.ndarray:
    """(n, 2d+1) matrix: one scorer input per prefix length."""
    feats = np.stack([s.features for s in traj.steps])
    return np.stack(
        [encode_prefix(feats[:i], total_steps) for i in range(1, len(traj.steps) + 1)]
    )


def forward_scores(tape: Tape, param_leaves: list[Node], X: Node | np.ndarray) -> Node:
    """Traced forward pass: (B, input_dim) -> (B,) scores in (0,1).

    `param_leaves` must follow the canonical block order w1,b1,w2,b2,w3,b3.
    """
    if not isinstance(X, Node):
        X = tape.constant(np.atleast_2d(np.asarray(X, dtype=float)))
    w1, b1, w2, b2, w3, b3 = param_leaves
    h1 = ad.tanh(ad.add(ad.matmul(X, w1), b1))
    h2 = ad.tanh(ad.add(ad.matmul(h1, w2), b2))
    z = ad.add(ad.matmul(h2, w3), b3)
    return ad.reshape(ad.sigmoid(z), (X.value.shape[0],))


def _forward_values(params: ParamVector, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h1 = np.tanh(X @ params.block("w1") + params.block("b1"))
    h2 = np.tanh(h1 @ params.block("w2") + params.block("b2"))
    z = h2 @ params.block("w3") + params.block("b3")
    with np.errstate(over="ignore"):
        return (1.0 / (1.0 + np.exp(-z))).reshape(-1)


def score_batch(params: ParamVector, X: np.ndarray) -> np.ndarray:
    return _forward_values(params, X)


def score_step(params: ParamVector, prefix: list[Step], config: PRMConfig) -> float:
    if not prefix:
        raise ValueError("prefix must be nonempty")
    x = encode_steps(prefix, config.total_steps)
    return float(_forward_values(params, x[None, :])[0])


def score_trajectory(params: ParamVector, traj: Trajectory, config: PRMConfig) -> np.ndarray:
    """Per-step scores p_1..p_n for one candidate trajectory."""
    return _forward_values(params, encode_trajectory(traj, config.total_steps))


def aggregate(p, eps: float = CLAMP_EPS) -> float:
    """Sum of per-step log-odds; the trajectory-level score before the sigmoid."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise ValueError("aggregate needs at least one step score")
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.sum(np.log(p) - np.log1p(-p)))


def aggregate_node(scores: Node, eps: float = CLAMP_EPS) -> Node:
    p = ad.clamp(scores, eps, 1.0 - eps)
    odds = ad.sub(ad.log(p), ad.log(ad.sub(1.0, p)))
    return ad.sum_(odds)


def correctness_signal(traj: Trajectory) -> int:
    return 1 if traj.final_correct else 0


def param_leaves(tape: Tape, params: ParamVector) -> list[Node]:
    return [tape.leaf(arr, name) for name, arr in params.block_arrays()]


def train_loss_node(tape: Tape, leaves: list[Node], X: np.ndarray, y: np.ndarray) -> Node:
    """Mean squared error of step scores against Monte-Carlo labels."""
    scores = forward_scores(tape, leaves, X)
    return ad.mean(ad.square(ad.sub(scores, tape.constant(y))))


def train_loss_single_domain(
    params: ParamVector, labeled: list[LabeledPrefix], config: PRMConfig
) -> float:
    if not labeled:
        raise ValueError("labeled dataset must be nonempty")
    X, y = encode_label_batch(labeled, config.total_steps)
    scores = _forward_values(params, X)
    return float(np.mean((scores - y) ** 2))


def weighted_train_loss_node(
    tape: Tape,
    leaves: list[Node],
    alpha: Node,
    per_domain: list[tuple[np.ndarray, np.ndarray]],
) -> Node:
    """Domain-weighted sum of single-domain losses, traced in phi and alpha."""
    K = len(per_domain)
    if alpha.value.size != K:
        raise ValueError(f"alpha has {alpha.value.size} entries for {K} domains")
    total = None
    for k, (X, y) in enumerate(per_domain):
        mask = np.zeros(K)
        mask[k] = 1.0
        a_k = ad.sum_(ad.mul(alpha, tape.constant(mask)))
        term = ad.mul(train_loss_node(tape, leaves, X, y), a_k)
        total = term if total is None else ad.add(total, term)
    return total


def weighted_train_loss(
    params: ParamVector,
    alpha: ParamVector,
    per_domain: list[list[LabeledPrefix]],
    config: PRMConfig,
) -> float:
    if len(alpha) != len(per_domain):
        raise ValueError(f"alpha has {len(alpha)} entries for {len(per_domain)} domains")
    return float(
        sum(
            a * train_loss_single_domain(params, labeled, config)
            for a, labeled in zip(alpha.values, per_domain)
        )
    )


def _uniform_length(trajs: list[Trajectory]) -> int:
    lengths = {len(t.steps) for t in trajs}
    if len(lengths) != 1:
        raise ValueError(f"trajectories must share a step count, got {sorted(lengths)}")
    return lengths.pop()


def meta_loss_node(
    tape: Tape,
    leaves: list[Node],
    trajs: list[Trajectory],
    config: PRMConfig,
) -> Node:
    """Aggregated-score loss: mean (sigmoid(A(p)) - r)^2 over trajectories."""
    n = _uniform_length(trajs)
    B = len(trajs)
    X = np.concatenate([encode_trajectory(t, config.total_steps) for t in trajs])
    r = np.array([float(correctness_signal(t)) for t in trajs])
    scores = forward_scores(tape, leaves, X)
    p = ad.clamp(ad.reshape(scores, (B, n)), config.clamp_eps, 1.0 - config.clamp_eps)
    odds = ad.sub(ad.log(p), ad.log(ad.sub(1.0, p)))
    agg = ad.sum_(odds, axis=1)
    pred = ad.sigmoid(agg)
    return ad.mean(ad.square(ad.sub(pred, tape.constant(r))))


def meta_loss(params: ParamVector, trajs: list[Trajectory], config: PRMConfig) -> float:
    if not trajs:
        raise ValueError("meta set must be nonempty")
    _uniform_length(trajs)
    total = 0.0
    for t in trajs:
        scores = score_trajectory(params, t, config)
        pred = 1.0 / (1.0 + np.exp(-aggregate(scores, config.clamp_eps)))
        total += (pred - correctness_signal(t)) ** 2
    return total / len(trajs)


def per_step_meta_loss_node(
    tape: Tape, leaves: list[Node], X: np.ndarray, y: np.ndarray
) -> Node:
    """Ablation upper objective: plain per-step MSE on the meta labels."""
    return train_loss_node(tape, leaves, X, y)


def per_step_meta_loss(
    params: ParamVector, labeled_meta: list[LabeledPrefix], config: PRMConfig
) -> float:
    return train_loss_single_domain(params, labeled_meta, config)


def save_checkpoint(
    path: str | Path,
    params: ParamVector,
    alpha: ParamVector,
    config: PRMConfig,
    step: int,
    domain_names: list[str],
) -> None:
    """Header JSON line, then the raw little-endian float64 blocks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "v": CHECKPOINT_VERSION,
        "kind": "prm_checkpoint",
        "config": {
            "feature_dim": config.feature_dim,
            "hidden_dim": config.hidden_dim,
            "total_steps": config.total_steps,
            "clamp_eps": config.clamp_eps,
        },
        "step": step,
        "num_domains": len(alpha),
        "domain_names": list(domain_names),
        "phi_blocks": [[b.name, list(b.shape)] for b in params.blocks],
        "phi_len": len(params),
        "alpha_len": len(alpha),
    }
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(alpha.values, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamVector, ParamVector, PRMConfig, dict]:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("v") != CHECKPOINT_VERSION or header.get("kind") != "prm_checkpoint":
        raise ValueError(f"{path}: not a recognized checkpoint")
    phi_len, alpha_len = header["phi_len"], header["alpha_len"]
    blob = raw[nl + 1 :]
    expect = (phi_len + alpha_len) * 8
    if len(blob) != expect:
        raise ValueError(f"{path}: parameter block has {len(blob)} bytes, expected {expect}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    from .params import BlockSpec

    blocks = [BlockSpec(name, tuple(shape)) for name, shape in header["phi_blocks"]]
    params = ParamVector(flat[:phi_len].copy(), blocks)
    alpha = ParamVector.from_blocks([("alpha", flat[phi_len:].copy())])
    cfg = header["config"]
    config = PRMConfig(
        feature_dim=cfg["feature_dim"],
        hidden_dim=cfg["hidden_dim"],
        total_steps=cfg["total_steps"],
        clamp_eps=cfg["clamp_eps"],
    )
    return params, alpha, config, header
