"""Experiment runner with its validation suite and run index."""

from .config import ExperimentConfig, bundled_model_doc, bundled_models
from .experiments import RunRecord, RunStore, read_index, run_conjugate_demo, run_experiment
from .sampling import halton_torus_sphere, level_point, sample_initial_conditions
from .validate import fd_block_error, run_validate

__all__ = [
    "ExperimentConfig", "RunRecord", "RunStore", "bundled_model_doc", "bundled_models", "fd_block_error",
    "halton_torus_sphere", "level_point", "read_index", "run_conjugate_demo", "run_experiment", "run_validate",
    "sample_initial_conditions",
]
