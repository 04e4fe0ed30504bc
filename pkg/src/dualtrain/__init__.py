"""
Dual-model training: a base network trained on every batch and a larger
"motivated" network that takes over whenever a motivation condition holds
for k consecutive batches, with weights and optimizer slots copied through
an explicit weight map at every switch.
"""
from .config import ExperimentSpec, RunConfig, load_experiment, load_run_config, run_config_from_dict
from .data import Dataset, load_cifar10_subset, make_synthetic
from .efficiency import (
    EfficiencyRow,
    FlopsLedger,
    acc_per_flops_classical,
    acc_per_flops_dual,
    average_forward_flops,
    efficiency_ratio,
)
from .motivation import ConditionKind, Motivation, MotivationState
from .optim import SGD, AdamW, Schedule, lr_at
from .store import ParamStore
from .trainer import BatchTrace, RunReport, evaluate, run_ablation_a, run_ablation_b, train
from .weight_map import WeightMap, build_map, copy_big_small, copy_small_big, extract
from .zoo import ArchConfig, Model, build, flops_forward

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ArchConfig", "BatchTrace", "ConditionKind", "Dataset", "EfficiencyRow",
    "ExperimentSpec", "FlopsLedger", "Model", "Motivation", "MotivationState", "ParamStore",
    "RunConfig", "RunReport", "SGD", "Schedule", "WeightMap", "acc_per_flops_classical",
    "acc_per_flops_dual", "average_forward_flops", "build", "build_map", "copy_big_small",
    "copy_small_big", "efficiency_ratio", "evaluate", "extract", "flops_forward",
    "load_cifar10_subset", "load_experiment", "load_run_config", "lr_at", "make_synthetic",
    "run_ablation_a", "run_ablation_b", "run_config_from_dict", "train",
]
