"""Desk-scale experiment harness: synthetic tasks, a manual-gradient trainer,
an exact isometric target construction, and the seeded experiment runner."""

from .data import SPLITS, SyntheticTask, input_projection, make_dataset, render_tokens
from .experiment import (
    REGIMES,
    ExperimentConfig,
    ModelConfig,
    PreparedExperiment,
    SeedConfig,
    TaskConfig,
    TrainConfig,
    ablate_seqalign,
    evaluate_method,
    load_config,
    prepare_experiment,
    run_experiment,
    warm_start_experiment,
    write_ablation_csv,
)
from .isometry import build_isometric_target
from .training import (
    alpha_search,
    classification_loss,
    evaluate,
    loss_and_grads,
    pooled_logits,
    train_classifier,
    warm_start_compare,
    write_curves,
)

__all__ = [
    "SPLITS",
    "REGIMES",
    "SyntheticTask",
    "make_dataset",
    "input_projection",
    "render_tokens",
    "TaskConfig",
    "ModelConfig",
    "TrainConfig",
    "SeedConfig",
    "ExperimentConfig",
    "PreparedExperiment",
    "load_config",
    "prepare_experiment",
    "evaluate_method",
    "run_experiment",
    "warm_start_experiment",
    "ablate_seqalign",
    "write_ablation_csv",
    "build_isometric_target",
    "pooled_logits",
    "classification_loss",
    "loss_and_grads",
    "train_classifier",
    "evaluate",
    "alpha_search",
    "warm_start_compare",
    "write_curves",
]
