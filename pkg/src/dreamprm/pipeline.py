"""Stage orchestration: simulate -> label -> train -> evaluate -> report.

Each stage reads the previous stage's on-disk artifacts, so any stage
can be rerun in isolation.  Every write is deterministic in the config;
a manifest at the run root records a content hash for each artifact, so
reproduction is checkable by comparing manifests.

Labels are written for all prefixes regardless of variant; the ORM
variant narrows to full-trajectory rows at train time, which keeps the
data artifacts shareable across variants.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from . import __version__
from .config import (
    DREAMPRM,
    NO_AFL,
    ORM_ONLY,
    VANILLA,
    ExperimentConfig,
    config_to_dict,
)
from .labeling import (
    apply_dynamic_filter,
    label_dataset,
    read_labels_jsonl,
    write_labels_jsonl,
)
from .prm import PRMConfig, load_checkpoint, save_checkpoint
from .reporting import write_report_files
from .selection import candidate_sets_from_domain, evaluate_params, report_to_csv, report_to_json
from .simulator import (
    derive_seed,
    domain_tag,
    generate_domain,
    read_domain_jsonl,
    write_domain_jsonl,
)
from .training import (
    PER_STEP,
    init_alpha,
    read_history_csv,
    train_dreamprm,
    train_vanilla,
    write_history_csv,
)

STAGES = ("simulate", "label", "train", "evaluate", "report")

# stage-level seed stream tags
_STREAM_DATA = 3001
_STREAM_LABEL = 3002

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"


class MissingArtifactError(FileNotFoundError):
    """A stage's inputs are absent; lists every missing path."""

    def __init__(self, missing: list[Path]):
        self.missing = [Path(p) for p in missing]
        listing = "\n".join(f"  - {p}" for p in self.missing)
        super().__init__(f"missing artifacts (run earlier stages first):\n{listing}")


def out_root(config: ExperimentConfig) -> Path:
    return Path(config.out_dir)


def domain_data_path(config: ExperimentConfig, name: str) -> Path:
    return out_root(config) / "data" / f"domain_{name}.jsonl"


def labels_path(config: ExperimentConfig, name: str) -> Path:
    return out_root(config) / "labels" / f"labels_{name}.jsonl"


def history_path(config: ExperimentConfig) -> Path:
    return out_root(config) / "train" / "history.csv"


def final_checkpoint_path(config: ExperimentConfig) -> Path:
    return out_root(config) / "train" / "final.bin"


def eval_report_path(config: ExperimentConfig) -> Path:
    return out_root(config) / "eval" / "report.json"


def report_dir(config: ExperimentConfig) -> Path:
    return out_root(config) / "report"


def prm_config_for(config: ExperimentConfig) -> PRMConfig:
    return PRMConfig(
        feature_dim=config.feature_dim,
        hidden_dim=config.hidden_dim,
        total_steps=config.total_steps,
    )


def _require(paths: list[Path]) -> None:
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise MissingArtifactError(missing)


def _all_domain_specs(config: ExperimentConfig):
    return list(config.train_domains) + [config.meta_domain, config.eval_domain]


def stage_simulate(config: ExperimentConfig) -> list[Path]:
    written = []
    for spec in _all_domain_specs(config):
        seed = derive_seed(config.seed, _STREAM_DATA, domain_tag(spec.name))
        domain = generate_domain(spec, seed=seed)
        path = domain_data_path(config, spec.name)
        write_domain_jsonl(domain, path)
        written.append(path)
    return written


def stage_label(config: ExperimentConfig) -> list[Path]:
    specs = list(config.train_domains) + [config.meta_domain]
    _require([domain_data_path(config, s.name) for s in specs])
    written = []
    for spec in specs:
        domain = read_domain_jsonl(domain_data_path(config, spec.name))
        seed = derive_seed(config.seed, _STREAM_LABEL, domain_tag(spec.name))
        labels = label_dataset(domain, num_rollouts=config.num_rollouts, seed=seed)
        if config.apply_filter:
            labels = apply_dynamic_filter(labels)
        path = labels_path(config, spec.name)
        write_labels_jsonl(
            labels, path, domain=spec.name, seed=seed, num_rollouts=config.num_rollouts
        )
        written.append(path)
    return written


def _load_labeled_domains(config: ExperimentConfig) -> list[list]:
    paths = [labels_path(config, s.name) for s in config.train_domains]
    _require(paths)
    return [read_labels_jsonl(p)[0] for p in paths]


def stage_train(config: ExperimentConfig) -> list[Path]:
    labeled = _load_labeled_domains(config)
    prm_config = prm_config_for(config)
    names = config.domain_names()
    train_dir = out_root(config) / "train"
    variant = config.variant

    if variant == DREAMPRM:
        meta_path = domain_data_path(config, config.meta_domain.name)
        _require([meta_path])
        meta_trajs = list(read_domain_jsonl(meta_path).trajectories())
        params, alpha, history = train_dreamprm(
            config.train,
            labeled,
            meta_trajs,
            prm_config,
            domain_names=names,
            checkpoint_dir=train_dir,
        )
    elif variant == NO_AFL:
        meta_labels_path = labels_path(config, config.meta_domain.name)
        _require([meta_labels_path])
        meta_labeled = read_labels_jsonl(meta_labels_path)[0]
        cfg = dataclasses.replace(config.train, upper_objective=PER_STEP)
        params, alpha, history = train_dreamprm(
            cfg,
            labeled,
            None,
            prm_config,
            domain_names=names,
            meta_labeled=meta_labeled,
            checkpoint_dir=train_dir,
        )
    elif variant in (VANILLA, ORM_ONLY):
        if variant == ORM_ONLY:
            n = config.total_steps
            labeled = [
                [lp for lp in dom if lp.prefix_len == n] for dom in labeled
            ]
        meta_path = domain_data_path(config, config.meta_domain.name)
        meta_trajs = (
            list(read_domain_jsonl(meta_path).trajectories()) if meta_path.exists() else None
        )
        params, history = train_vanilla(
            config.train,
            labeled,
            prm_config,
            meta_trajectories=meta_trajs,
            domain_names=names,
            checkpoint_dir=train_dir,
        )
        alpha = init_alpha(len(names))
    else:  # pragma: no cover - config validation forbids this
        raise ValueError(f"unknown variant {variant}")

    hist_path = history_path(config)
    write_history_csv(history, hist_path)
    final_path = final_checkpoint_path(config)
    save_checkpoint(
        final_path, params, alpha, prm_config, config.train.total_outer_iterations, names
    )
    return [hist_path, final_path]


def stage_evaluate(config: ExperimentConfig) -> list[Path]:
    eval_path = domain_data_path(config, config.eval_domain.name)
    ckpt = final_checkpoint_path(config)
    _require([eval_path, ckpt])
    params, _, prm_config, _ = load_checkpoint(ckpt)
    csets = candidate_sets_from_domain(read_domain_jsonl(eval_path))
    report = evaluate_params(params, csets, prm_config)
    json_path = eval_report_path(config)
    report_to_json(report, json_path)
    csv_path = json_path.with_suffix(".csv")
    report_to_csv(report, csv_path)
    return [json_path, csv_path]


def stage_report(config: ExperimentConfig) -> list[Path]:
    hist_path = history_path(config)
    rep_path = eval_report_path(config)
    _require([hist_path, rep_path])
    history = read_history_csv(hist_path, domain_names=config.domain_names())
    return write_report_files(config, history, rep_path, report_dir(config))


_STAGE_FUNCS = {
    "simulate": stage_simulate,
    "label": stage_label,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def config_digest(config: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_config_snapshot(config: ExperimentConfig) -> Path:
    path = out_root(config) / CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), sort_keys=True, indent=2) + "\n")
    return path


def write_manifest(config: ExperimentConfig) -> Path:
    """Hash every artifact under the run root (the manifest excluded)."""
    root = out_root(config)
    files = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.name == MANIFEST_FILE:
            continue
        rel = path.relative_to(root).as_posix()
        files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
    digest = config_digest(config)
    manifest = {
        "version": __version__,
        "run_id": digest[:12],
        "config_sha256": digest,
        "seed": config.seed,
        "variant": config.variant,
        "files": files,
    }
    path = root / MANIFEST_FILE
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def read_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / MANIFEST_FILE
    if not path.exists():
        raise MissingArtifactError([path])
    return json.loads(path.read_text())


def run_pipeline(config: ExperimentConfig, stages: list[str] | None = None) -> Path:
    """Run the requested stages in pipeline order; returns the run root."""
    chosen = list(STAGES) if stages is None else list(stages)
    unknown = [s for s in chosen if s not in STAGES]
    if unknown:
        raise ValueError(f"unknown stages {unknown}; valid: {list(STAGES)}")
    write_config_snapshot(config)
    try:
        for stage in STAGES:
            if stage in chosen:
                _STAGE_FUNCS[stage](config)
    finally:
        # partial artifacts stay useful after a failure: hash what exists
        write_manifest(config)
    return out_root(config)
