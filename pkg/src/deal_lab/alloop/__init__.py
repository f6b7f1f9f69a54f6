"""Active-learning loop: label store, oracle, baselines, experiments."""
from .experiment import (
    ABLATIONS,
    ALConfig,
    AblationRecord,
    CycleReport,
    SummaryRow,
    Trainer,
    evaluate,
    full_supervision,
    population_std,
    run_ablation,
    run_experiment,
    run_kfold,
    summarize,
    summarize_ablation,
)
from .labels import LabelRecord, LabelStore, Oracle, Source
from .strategies import Strategy, k_center_greedy

__all__ = [
    "ABLATIONS",
    "ALConfig",
    "AblationRecord",
    "CycleReport",
    "LabelRecord",
    "LabelStore",
    "Oracle",
    "Source",
    "Strategy",
    "SummaryRow",
    "Trainer",
    "evaluate",
    "full_supervision",
    "k_center_greedy",
    "population_std",
    "run_ablation",
    "run_experiment",
    "run_kfold",
    "summarize",
    "summarize_ablation",
]
