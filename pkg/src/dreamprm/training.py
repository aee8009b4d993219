"""Alternating bi-level training: k weighted inner steps, one outer step.

Each outer iteration unrolls k inner optimizer steps on the domain-
weighted training loss (alpha held fixed), then takes one adaptive step
on alpha along the hypergradient of the upper objective through that
window.  The vanilla baseline runs the identical inner loop with alpha
frozen at ones.

Domain weights are unconstrained reals initialized to 1.0; a divergence
guard aborts runs whose losses explode instead of projecting weights.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteGradientError
from .hypergrad import (
    ADAMW,
    SGD,
    UnrollDivergenceError,
    meta_gradient,
    unroll_window,
    window_hypergrad,
)
from .labeling import LabeledPrefix
from .optim import OptimizerState, adamw_step, sgd_step, step_decay_lr
from .params import ParamVector
from .prm import (
    PRMConfig,
    encode_label_batch,
    encode_trajectory,
    forward_scores,
    init_params,
    save_checkpoint,
    score_batch,
    weighted_train_loss_node,
)
from .simulator import Trajectory, derive_seed

AFL = "afl"
PER_STEP = "per_step"

STATE_PERSIST = "persist"
STATE_RESET = "reset"

# seed stream tags: keep batch draws independent of everything else
_STREAM_INNER = 2001
_STREAM_META = 2002
_STREAM_INIT = 2003


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, detail: str):
        super().__init__(f"training diverged at outer iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    unroll_steps: int = 5
    inner_lr: float = 1e-3
    inner_optimizer: str = SGD
    inner_weight_decay: float = 0.0
    inner_state: str = STATE_PERSIST
    outer_lr: float = 0.01
    outer_weight_decay: float = 1e-3
    outer_schedule_step: int = 5000
    outer_schedule_gamma: float = 0.5
    total_outer_iterations: int = 1000
    batch_size: int = 32
    meta_batch_size: int = 32
    upper_objective: str = AFL
    checkpoint_every: int = 500
    divergence_threshold: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if self.unroll_steps < 1:
            raise ValueError("unroll_steps must be >= 1")
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.inner_optimizer not in (SGD, ADAMW):
            raise ValueError(f"unknown inner_optimizer '{self.inner_optimizer}'")
        if self.inner_state not in (STATE_PERSIST, STATE_RESET):
            raise ValueError(f"unknown inner_state '{self.inner_state}'")
        if self.upper_objective not in (AFL, PER_STEP):
            raise ValueError(f"unknown upper_objective '{self.upper_objective}'")
        if self.batch_size < 1 or self.meta_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.total_outer_iterations < 1:
            raise ValueError("total_outer_iterations must be >= 1")


@dataclass
class HistoryRow:
    iteration: int
    inner_loss: float
    meta_loss: float  # nan when no meta set is tracked
    alpha: tuple[float, ...]
    lr: float


@dataclass
class TrainHistory:
    domain_names: list[str]
    rows: list[HistoryRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.rows])

    def final_alpha(self) -> np.ndarray:
        return np.array(self.rows[-1].alpha)


def write_history_csv(history: TrainHistory, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    K = len(history.domain_names)
    header = (
        ["iteration", "inner_loss", "meta_loss"]
        + [f"alpha_{k + 1}" for k in range(K)]
        + ["lr"]
    )
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in history.rows:
            meta = "" if math.isnan(r.meta_loss) else repr(r.meta_loss)
            w.writerow(
                [r.iteration, repr(r.inner_loss), meta]
                + [repr(a) for a in r.alpha]
                + [repr(r.lr)]
            )


def read_history_csv(path: str | Path, domain_names: list[str] | None = None) -> TrainHistory:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = len(header) - 4
        if K < 1 or header[:3] != ["iteration", "inner_loss", "meta_loss"] or header[-1] != "lr":
            raise ValueError(f"{path}: unrecognized history header {header}")
        names = domain_names or [f"domain_{k + 1}" for k in range(K)]
        history = TrainHistory(domain_names=list(names))
        for row in reader:
            meta = float(row[2]) if row[2] else float("nan")
            history.rows.append(
                HistoryRow(
                    iteration=int(row[0]),
                    inner_loss=float(row[1]),
                    meta_loss=meta,
                    alpha=tuple(float(x) for x in row[3 : 3 + K]),
                    lr=float(row[-1]),
                )
            )
    return history


@dataclass
class _EncodedDomains:
    X: list[np.ndarray]  # per domain, (P_k, input_dim)
    y: list[np.ndarray]  # per domain, (P_k,)

    @property
    def num_domains(self) -> int:
        return len(self.X)


def encode_domains(
    labeled_domains: list[list[LabeledPrefix]], prm_config: PRMConfig
) -> _EncodedDomains:
    if len(labeled_domains) < 1:
        raise ValueError("need at least one labeled domain")
    Xs, ys = [], []
    for k, labeled in enumerate(labeled_domains):
        if not labeled:
            raise ValueError(f"labeled domain {k} is empty")
        X, y = encode_label_batch(labeled, prm_config.total_steps)
        Xs.append(X)
        ys.append(y)
    return _EncodedDomains(Xs, ys)


@dataclass
class _EncodedMeta:
    X: np.ndarray  # (T, n, input_dim) for AFL; (P, input_dim) for per-step
    y: np.ndarray  # (T,) correctness or (P,) labels
    kind: str


def encode_meta_afl(trajs: list[Trajectory], prm_config: PRMConfig) -> _EncodedMeta:
    if not trajs:
        raise ValueError("meta set must be nonempty")
    lengths = {len(t.steps) for t in trajs}
    if lengths != {prm_config.total_steps}:
        raise ValueError(f"meta trajectories must have {prm_config.total_steps} steps")
    X = np.stack([encode_trajectory(t, prm_config.total_steps) for t in trajs])
    r = np.array([1.0 if t.final_correct else 0.0 for t in trajs])
    return _EncodedMeta(X, r, AFL)


def encode_meta_per_step(labeled: list[LabeledPrefix], prm_config: PRMConfig) -> _EncodedMeta:
    if not labeled:
        raise ValueError("meta label set must be nonempty")
    X, y = encode_label_batch(labeled, prm_config.total_steps)
    return _EncodedMeta(X, y, PER_STEP)


def _sample_rows(seed: int, count: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed))
    if count >= size:
        return rng.choice(count, size=size, replace=False)
    return rng.integers(0, count, size=size)


def _inner_batches(
    data: _EncodedDomains, config: TrainConfig, t: int, j: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    batches = []
    for k in range(data.num_domains):
        idx = _sample_rows(
            derive_seed(config.seed, _STREAM_INNER, t, j, k),
            data.X[k].shape[0],
            config.batch_size,
        )
        batches.append((data.X[k][idx], data.y[k][idx]))
    return batches


def _meta_batch(meta: _EncodedMeta, config: TrainConfig, t: int) -> tuple[np.ndarray, np.ndarray]:
    idx = _sample_rows(
        derive_seed(config.seed, _STREAM_META, t), meta.X.shape[0], config.meta_batch_size
    )
    return meta.X[idx], meta.y[idx]


def _make_inner_builder(batches, prm_config: PRMConfig):
    def builder(tape, leaves, alpha_leaf):
        return weighted_train_loss_node(tape, leaves, alpha_leaf, batches)

    return builder


def _make_meta_builder(meta: _EncodedMeta, Xb: np.ndarray, yb: np.ndarray, prm_config: PRMConfig):
    if meta.kind == AFL:
        B, n, _ = Xb.shape
        flat = Xb.reshape(B * n, -1)

        def builder(tape, leaves):
            scores = forward_scores(tape, leaves, flat)
            p = ad.clamp(
                ad.reshape(scores, (B, n)), prm_config.clamp_eps, 1.0 - prm_config.clamp_eps
            )
            odds = ad.sub(ad.log(p), ad.log(ad.sub(1.0, p)))
            pred = ad.sigmoid(ad.sum_(odds, axis=1))
            return ad.mean(ad.square(ad.sub(pred, tape.constant(yb))))

    else:

        def builder(tape, leaves):
            scores = forward_scores(tape, leaves, Xb)
            return ad.mean(ad.square(ad.sub(scores, tape.constant(yb))))

    return builder


def meta_loss_value(params: ParamVector, meta: _EncodedMeta, prm_config: PRMConfig) -> float:
    """Upper objective evaluated on the full encoded meta set."""
    if meta.kind == AFL:
        T, n, d = meta.X.shape
        scores = score_batch(params, meta.X.reshape(T * n, d)).reshape(T, n)
        p = np.clip(scores, prm_config.clamp_eps, 1.0 - prm_config.clamp_eps)
        agg = np.sum(np.log(p) - np.log1p(-p), axis=1)
        pred = 1.0 / (1.0 + np.exp(-agg))
        return float(np.mean((pred - meta.y) ** 2))
    scores = score_batch(params, meta.X)
    return float(np.mean((scores - meta.y) ** 2))


def _eager_weighted_grad(
    params: ParamVector,
    alpha: ParamVector,
    batches: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[float, ParamVector]:
    tape = ad.Tape()
    leaves = [tape.leaf(arr, name) for name, arr in params.block_arrays()]
    alpha_leaf = tape.constant(alpha.values)
    loss = weighted_train_loss_node(tape, leaves, alpha_leaf, batches)
    grads = tape.gradients(loss, leaves)
    gvec = ParamVector.from_blocks(
        [(b.name, g.value.reshape(b.shape)) for b, g in zip(params.blocks, grads)]
    )
    return float(loss.value), gvec


def inner_update(
    params: ParamVector,
    alpha: ParamVector,
    batches: list[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    state: OptimizerState | None = None,
    iteration: int = 0,
) -> tuple[ParamVector, OptimizerState | None]:
    """One optimizer step on the weighted loss with alpha held fixed."""
    loss, grad = _eager_weighted_grad(params, alpha, batches)
    if not np.isfinite(loss) or loss > config.divergence_threshold:
        raise DivergenceError(iteration, f"inner loss {loss}")
    if config.inner_optimizer == SGD:
        return sgd_step(params, grad, config.inner_lr), state
    if state is None:
        state = OptimizerState.fresh(len(params))
    new_params, new_state = adamw_step(
        params, grad, state, config.inner_lr, config.inner_weight_decay
    )
    return new_params, new_state


def outer_update(
    alpha: ParamVector,
    hypergrad: ParamVector,
    outer_state: OptimizerState,
    t: int,
    config: TrainConfig,
) -> tuple[ParamVector, OptimizerState, float]:
    """One adaptive step on alpha with the step-decayed outer schedule."""
    lr = step_decay_lr(
        config.outer_lr, config.outer_schedule_step, config.outer_schedule_gamma, t
    )
    new_alpha, new_state = adamw_step(
        alpha, hypergrad, outer_state, lr, config.outer_weight_decay
    )
    return new_alpha, new_state, lr


def init_alpha(num_domains: int) -> ParamVector:
    return ParamVector.from_blocks([("alpha", np.ones(num_domains))])


def _maybe_checkpoint(
    checkpoint_dir,
    config: TrainConfig,
    prm_config: PRMConfig,
    params: ParamVector,
    alpha: ParamVector,
    t: int,
    domain_names: list[str],
) -> None:
    if checkpoint_dir is None:
        return
    if (t + 1) % config.checkpoint_every != 0:
        return
    path = Path(checkpoint_dir) / f"ckpt_{t + 1:06d}.bin"
    save_checkpoint(path, params, alpha, prm_config, t + 1, domain_names)


def train_dreamprm(
    config: TrainConfig,
    labeled_domains: list[list[LabeledPrefix]],
    meta_trajectories: list[Trajectory] | None,
    prm_config: PRMConfig,
    domain_names: list[str] | None = None,
    meta_labeled: list[LabeledPrefix] | None = None,
    checkpoint_dir: str | Path | None = None,
    init: ParamVector | None = None,
) -> tuple[ParamVector, ParamVector, TrainHistory]:
    """Full bi-level loop: returns trained scorer, domain weights, history."""
    data = encode_domains(labeled_domains, prm_config)
    K = data.num_domains
    names = list(domain_names) if domain_names else [f"domain_{k + 1}" for k in range(K)]
    if config.upper_objective == AFL:
        if meta_trajectories is None:
            raise ValueError("AFL upper objective needs meta trajectories")
        meta = encode_meta_afl(meta_trajectories, prm_config)
    else:
        if meta_labeled is None:
            raise ValueError("per-step upper objective needs labeled meta prefixes")
        meta = encode_meta_per_step(meta_labeled, prm_config)

    params = init.copy() if init is not None else init_params(
        prm_config, derive_seed(config.seed, _STREAM_INIT)
    )
    alpha = init_alpha(K)
    outer_state = OptimizerState.fresh(K)
    inner_state: OptimizerState | None = None
    history = TrainHistory(domain_names=names)

    for t in range(config.total_outer_iterations):
        builders = [
            _make_inner_builder(_inner_batches(data, config, t, j), prm_config)
            for j in range(config.unroll_steps)
        ]
        window_state = None
        if config.inner_optimizer == ADAMW and config.inner_state == STATE_PERSIST:
            window_state = inner_state
        try:
            new_params, window_state, steps = unroll_window(
                builders,
                params,
                alpha,
                optimizer=config.inner_optimizer,
                lr=config.inner_lr,
                state=window_state,
                weight_decay=config.inner_weight_decay,
            )
            Xb, yb = _meta_batch(meta, config, t)
            meta_builder = _make_meta_builder(meta, Xb, yb, prm_config)
            meta_value, mgrad = meta_gradient(meta_builder, new_params)
            g_alpha_vals = window_hypergrad(steps, mgrad, K)
        except UnrollDivergenceError as exc:
            raise DivergenceError(t, str(exc)) from exc
        except NonFiniteGradientError as exc:
            raise DivergenceError(t, str(exc)) from exc

        inner_losses = [s.loss_value for s in steps]
        if max(inner_losses) > config.divergence_threshold or not np.isfinite(meta_value):
            raise DivergenceError(
                t, f"inner loss {max(inner_losses)}, meta loss {meta_value}"
            )
        params = new_params
        if config.inner_state == STATE_PERSIST:
            inner_state = window_state

        alpha, outer_state, lr = outer_update(
            alpha, alpha.like(g_alpha_vals), outer_state, t, config
        )
        if not np.all(np.isfinite(alpha.values)):
            raise DivergenceError(t, f"non-finite domain weights {alpha.values}")

        history.rows.append(
            HistoryRow(
                iteration=t,
                inner_loss=float(np.mean(inner_losses)),
                meta_loss=meta_value,
                alpha=tuple(float(a) for a in alpha.values),
                lr=lr,
            )
        )
        _maybe_checkpoint(checkpoint_dir, config, prm_config, params, alpha, t, names)

    return params, alpha, history


def train_vanilla(
    config: TrainConfig,
    labeled_domains: list[list[LabeledPrefix]],
    prm_config: PRMConfig,
    meta_trajectories: list[Trajectory] | None = None,
    domain_names: list[str] | None = None,
    checkpoint_dir: str | Path | None = None,
    init: ParamVector | None = None,
) -> tuple[ParamVector, TrainHistory]:
    """Same inner loop with alpha frozen at ones and no outer updates."""
    data = encode_domains(labeled_domains, prm_config)
    K = data.num_domains
    names = list(domain_names) if domain_names else [f"domain_{k + 1}" for k in range(K)]
    meta = encode_meta_afl(meta_trajectories, prm_config) if meta_trajectories else None

    params = init.copy() if init is not None else init_params(
        prm_config, derive_seed(config.seed, _STREAM_INIT)
    )
    alpha = init_alpha(K)
    inner_state: OptimizerState | None = None
    history = TrainHistory(domain_names=names)

    for t in range(config.total_outer_iterations):
        losses = []
        for j in range(config.unroll_steps):
            batches = _inner_batches(data, config, t, j)
            loss, grad = _eager_weighted_grad(params, alpha, batches)
            if not np.isfinite(loss) or loss > config.divergence_threshold:
                raise DivergenceError(t, f"inner loss {loss}")
            losses.append(loss)
            if config.inner_optimizer == SGD:
                params = sgd_step(params, grad, config.inner_lr)
            else:
                if inner_state is None or config.inner_state == STATE_RESET and j == 0:
                    inner_state = OptimizerState.fresh(len(params))
                params, inner_state = adamw_step(
                    params, grad, inner_state, config.inner_lr, config.inner_weight_decay
                )
        if meta is not None:
            Xb, yb = _meta_batch(meta, config, t)
            sub = _EncodedMeta(Xb, yb, meta.kind)
            meta_value = meta_loss_value(params, sub, prm_config)
        else:
            meta_value = float("nan")
        history.rows.append(
            HistoryRow(
                iteration=t,
                inner_loss=float(np.mean(losses)),
                meta_loss=meta_value,
                alpha=tuple(1.0 for _ in range(K)),
                lr=config.inner_lr,
            )
        )
        _maybe_checkpoint(checkpoint_dir, config, prm_config, params, alpha, t, names)

    return params, history
