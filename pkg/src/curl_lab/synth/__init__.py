"""Synthetic circle-dataset experiment."""

from .experiment import (
    K_GRID,
    TRAJECTORY_COLUMNS,
    TrainConfig,
    TrajectoryRecord,
    best_l_sup,
    gen_circle,
    mlp_gradient_check,
    run_sweep,
    train_contrastive,
    train_run,
    trajectory_slope,
    write_trajectory_csv,
)
from .mlp import MLP

__all__ = [
    "K_GRID", "MLP", "TRAJECTORY_COLUMNS", "TrainConfig", "TrajectoryRecord", "best_l_sup",
    "gen_circle", "mlp_gradient_check", "run_sweep", "train_contrastive", "train_run",
    "trajectory_slope", "write_trajectory_csv",
]
