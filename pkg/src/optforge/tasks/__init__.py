from .base import MNISTNET_LR_GRID, GridSearchConfig, Task
from .evaluate import RunResult, evaluate_optimizer, grid_search, train
from .mnist import MLPTask, MnistData, load_idx, load_mnist, mnistnet_task
from .presets import PRESETS, PresetOptimizer
from .synthetic import LogRegTask, QuadraticTask, logreg_task, quadratic_task

__all__ = [
    "MNISTNET_LR_GRID",
    "GridSearchConfig",
    "Task",
    "RunResult",
    "evaluate_optimizer",
    "grid_search",
    "train",
    "MLPTask",
    "MnistData",
    "load_idx",
    "load_mnist",
    "mnistnet_task",
    "PRESETS",
    "PresetOptimizer",
    "LogRegTask",
    "QuadraticTask",
    "logreg_task",
    "quadratic_task",
]
