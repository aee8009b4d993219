"""Shared builders for pipeline-level tests.

The tiny experiment keeps every stage under a second so the harness
tests stay fast; acceptance runs use the default configuration instead.
"""

from dreamprm.config import ExperimentConfig, config_from_dict


def tiny_experiment_dict(out_dir: str, **overrides) -> dict:
    small = dict(
        num_questions=8,
        steps_per_trajectory=3,
        trajectories_per_question=4,
        feature_dim=4,
        flaw_rate=0.3,
        feature_noise_sigma=0.1,
        flaw_decay=0.3,
    )
    data = {
        "out_dir": out_dir,
        "seed": 1,
        "num_rollouts": 4,
        "hidden_dim": 8,
        "train_domains": [
            dict(small, name="informative-a"),
            dict(small, name="noisy", label_noise=0.5),
        ],
        "meta_domain": dict(small, name="meta", num_questions=6, trajectories_per_question=2),
        "eval_domain": dict(small, name="eval", num_questions=6, trajectories_per_question=8),
        "train": {
            "total_outer_iterations": 12,
            "unroll_steps": 2,
            "batch_size": 8,
            "meta_batch_size": 8,
            "checkpoint_every": 6,
        },
    }
    data.update(overrides)
    return data


def tiny_experiment(out_dir: str, **overrides) -> ExperimentConfig:
    return config_from_dict(tiny_experiment_dict(str(out_dir), **overrides))
