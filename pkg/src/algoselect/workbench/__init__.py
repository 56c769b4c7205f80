"""Configuration, stage orchestration and the command-line interface."""

from .config import (
    DEFAULT_CONFIG,
    DESK_SCALE,
    SCHEMA_VERSION,
    ExperimentConfig,
    InvalidConfigError,
    MissingUpstreamError,
    SchemaMismatchError,
    WorkbenchError,
)
from .pipeline import STAGES, Workspace, run_pipeline, run_stage

__all__ = [
    "DEFAULT_CONFIG", "DESK_SCALE", "SCHEMA_VERSION", "STAGES", "ExperimentConfig", "InvalidConfigError",
    "MissingUpstreamError", "SchemaMismatchError", "WorkbenchError", "Workspace", "run_pipeline", "run_stage",
]
