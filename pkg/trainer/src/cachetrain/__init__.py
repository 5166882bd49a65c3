"""Unrolled reconstruction networks trained on cachesense dataset exports."""

from .data import Dataset, GeometryBuilder, InstanceBatch, load_dataset
from .layers import StageParameters, build_decoder, build_encoder, soft_threshold
from .network import UnrolledSolver, load_network, save_network, solver_initialized
from .train import TrainingConfig, evaluate, multi_stage_loss, nmse, train

__all__ = [
    "Dataset",
    "GeometryBuilder",
    "InstanceBatch",
    "load_dataset",
    "StageParameters",
    "build_decoder",
    "build_encoder",
    "soft_threshold",
    "UnrolledSolver",
    "load_network",
    "save_network",
    "solver_initialized",
    "TrainingConfig",
    "evaluate",
    "multi_stage_loss",
    "nmse",
    "train",
]
