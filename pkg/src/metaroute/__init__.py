"""Meta-learned construction heuristics for TSP and CVRP."""

from .evalbench import evaluate, generalization_matrix, meta_vs_multi_report, per_instance_fine_tune
from .metatrain import MetaConfig, fine_tune, meta_train_rl, meta_train_supervised, multi_task_train
from .params import Architecture, ParameterSet
from .rltrain import TrainConfig, train_rl, train_supervised
from .solutions import RoutePlan, Tour
from .taskgen import CVRP, TSP, Instance, TaskSet, TaskSpec, generate_dataset, preset_taskset

__version__ = "0.1.0"

__all__ = [
    "Architecture", "CVRP", "Instance", "MetaConfig", "ParameterSet", "RoutePlan", "TSP", "TaskSet", "TaskSpec",
    "Tour", "TrainConfig", "evaluate", "fine_tune", "generalization_matrix", "generate_dataset",
    "meta_train_rl", "meta_train_supervised", "meta_vs_multi_report", "multi_task_train",
    "per_instance_fine_tune", "preset_taskset", "train_rl", "train_supervised",
]
