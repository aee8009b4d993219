"""Experiment configuration: the full description of one run.

A config bundles the domain roster, labeling settings, trainer settings,
evaluation settings, variant switch, output directory, and global seed.
Files are TOML (JSON mirror accepted by extension); missing keys fall
back to the defaults below, so a config file only states deviations.

The global seed is authoritative: at resolution time it overwrites the
trainer seed and feeds every derived stream, so one integer pins the
whole run.  Precedence: command-line flag, then DREAMPRM_SEED, then the
config file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .simulator import DomainSpec, clean_variant
from .training import TrainConfig

SCHEMA_VERSION = 1
SEED_ENV_VAR = "DREAMPRM_SEED"

DREAMPRM = "dreamprm"
VANILLA = "vanilla"
NO_AFL = "no_afl"
ORM_ONLY = "orm_only"
VARIANTS = (DREAMPRM, VANILLA, NO_AFL, ORM_ONLY)

ROLE_INFORMATIVE = "informative"
ROLE_NOISY = "noisy"
ROLE_TRIVIAL = "trivial"


class ConfigError(ValueError):
    """Validation failure; message lists every offending field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


def default_train_domains() -> list[DomainSpec]:
    """Four-domain imbalanced mixture: two informative, one with 50%
    label noise, one dominated by trivially easy questions.

    The trivial domain also carries a high flaw rate: its trajectories are
    full of sloppy steps that succeed anyway because the questions are easy.
    Trained at uniform weight that teaches the scorer that flawed steps are
    fine, which is what makes the uniform baseline measurably worse here.
    """
    base = dict(
        num_questions=48,
        steps_per_trajectory=5,
        trajectories_per_question=8,
        feature_dim=8,
        feature_noise_sigma=0.1,
        base_solve_prob=0.9,
        flaw_decay=0.3,
    )
    return [
        DomainSpec(name="informative-a", flaw_rate=0.3, **base),
        DomainSpec(name="informative-b", flaw_rate=0.3, **base),
        DomainSpec(name="noisy", flaw_rate=0.3, label_noise=0.5, **base),
        DomainSpec(name="trivial", flaw_rate=0.7, triviality=0.9, **base),
    ]


def default_meta_domain() -> DomainSpec:
    return clean_variant(default_train_domains()[0], name="meta")


def default_eval_domain() -> DomainSpec:
    spec = clean_variant(default_train_domains()[0], name="eval")
    return dataclasses.replace(spec, num_questions=48)


@dataclass(frozen=True)
class ExperimentConfig:
    train_domains: list[DomainSpec] = field(default_factory=default_train_domains)
    meta_domain: DomainSpec = field(default_factory=default_meta_domain)
    eval_domain: DomainSpec = field(default_factory=default_eval_domain)
    train: TrainConfig = field(default_factory=TrainConfig)
    num_rollouts: int = 8
    apply_filter: bool = False
    hidden_dim: int = 32
    variant: str = DREAMPRM
    out_dir: str = "runs/default"
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        problems = []
        if self.schema_version != SCHEMA_VERSION:
            problems.append(
                f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}"
            )
        if self.variant not in VARIANTS:
            problems.append(f"variant: '{self.variant}' not one of {VARIANTS}")
        if self.num_rollouts < 1:
            problems.append("num_rollouts: must be >= 1")
        if self.hidden_dim < 1:
            problems.append("hidden_dim: must be >= 1")
        if len(self.train_domains) < 1:
            problems.append("train_domains: need at least one domain")
        names = [d.name for d in self.train_domains]
        if len(set(names)) != len(names):
            problems.append(f"train_domains: duplicate names in {names}")
        dims = {d.feature_dim for d in self.train_domains}
        dims |= {self.meta_domain.feature_dim, self.eval_domain.feature_dim}
        if len(dims) != 1:
            problems.append(f"feature_dim: domains disagree ({sorted(dims)})")
        steps = {d.steps_per_trajectory for d in self.train_domains}
        steps |= {self.meta_domain.steps_per_trajectory, self.eval_domain.steps_per_trajectory}
        if len(steps) != 1:
            problems.append(f"steps_per_trajectory: domains disagree ({sorted(steps)})")
        if problems:
            raise ConfigError(problems)

    @property
    def feature_dim(self) -> int:
        return self.train_domains[0].feature_dim

    @property
    def total_steps(self) -> int:
        return self.train_domains[0].steps_per_trajectory

    def domain_names(self) -> list[str]:
        return [d.name for d in self.train_domains]


def domain_role(spec: DomainSpec) -> str:
    """Coarse quality bucket used by reporting and the ordering checks."""
    if spec.triviality >= 0.5:
        return ROLE_TRIVIAL
    if spec.label_noise >= 0.3:
        return ROLE_NOISY
    return ROLE_INFORMATIVE


def domain_roles(config: ExperimentConfig) -> dict[str, str]:
    return {d.name: domain_role(d) for d in config.train_domains}


def paper_scale_train() -> TrainConfig:
    """Trainer settings matching the published full-scale recipe; the
    data scale here stays synthetic, so this is a preset, not a default."""
    return TrainConfig(
        inner_optimizer="adamw",
        inner_lr=5e-7,
        total_outer_iterations=10_000,
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "schema_version": config.schema_version,
        "seed": config.seed,
        "variant": config.variant,
        "out_dir": config.out_dir,
        "num_rollouts": config.num_rollouts,
        "apply_filter": config.apply_filter,
        "hidden_dim": config.hidden_dim,
        "train_domains": [dataclasses.asdict(d) for d in config.train_domains],
        "meta_domain": dataclasses.asdict(config.meta_domain),
        "eval_domain": dataclasses.asdict(config.eval_domain),
        "train": dataclasses.asdict(config.train),
    }


def _build(cls, data: dict, path: str, problems: list[str]):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"{path}.{key}: unknown field")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        problems.extend(f"{path}: {p}" for p in exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"{path}: {exc}")
    return None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a table/object"])
    problems: list[str] = []
    kwargs: dict = {}
    scalar_keys = (
        "schema_version",
        "seed",
        "variant",
        "out_dir",
        "num_rollouts",
        "apply_filter",
        "hidden_dim",
    )
    known = set(scalar_keys) | {"train_domains", "meta_domain", "eval_domain", "train"}
    for key in data:
        if key not in known:
            problems.append(f"{key}: unknown field")
    for key in scalar_keys:
        if key in data:
            kwargs[key] = data[key]

    if "train_domains" in data:
        entries = data["train_domains"]
        if not isinstance(entries, list):
            problems.append("train_domains: expected a list of domain tables")
        else:
            specs = []
            for i, entry in enumerate(entries):
                spec = _build(DomainSpec, entry, f"train_domains[{i}]", problems)
                if spec is not None:
                    specs.append(spec)
            kwargs["train_domains"] = specs
    for key in ("meta_domain", "eval_domain"):
        if key in data:
            spec = _build(DomainSpec, data[key], key, problems)
            if spec is not None:
                kwargs[key] = spec
    if "train" in data:
        cfg = _build(TrainConfig, data["train"], "train", problems)
        if cfg is not None:
            kwargs["train"] = cfg

    built = None
    try:
        built = ExperimentConfig(**kwargs)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return built


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    else:
        try:
            with path.open("rb") as fh:
                data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: invalid TOML ({exc})"]) from exc
    return config_from_dict(data)


def resolve(
    config: ExperimentConfig,
    seed: int | None = None,
    variant: str | None = None,
    out_dir: str | None = None,
    env: dict | None = None,
) -> ExperimentConfig:
    """Apply flag/environment overrides and thread the seed through."""
    env = os.environ if env is None else env
    problems: list[str] = []
    if seed is None and SEED_ENV_VAR in env:
        raw = env[SEED_ENV_VAR]
        try:
            seed = int(raw)
        except ValueError:
            problems.append(f"{SEED_ENV_VAR}: not an integer ({raw!r})")
    if variant is not None:
        variant = variant.lower()
        if variant not in VARIANTS:
            problems.append(f"variant: '{variant}' not one of {VARIANTS}")
    if problems:
        raise ConfigError(problems)
    final_seed = config.seed if seed is None else seed
    return dataclasses.replace(
        config,
        seed=final_seed,
        variant=config.variant if variant is None else variant,
        out_dir=config.out_dir if out_dir is None else str(out_dir),
        train=dataclasses.replace(config.train, seed=final_seed),
    )
