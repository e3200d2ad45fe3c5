"""Optimizers, training runs, multi-seed suites."""

from .config import (
    ExperimentConfig,
    OptimizerConfig,
    RelatednessSource,
    default_suite_config,
    load_config,
    parse_config,
)
from .suite import SUITE_MODES, SuiteResult, run_suite
from .train import (
    DataBundle,
    RunLog,
    TrainResult,
    dump_predictions,
    evaluate,
    load_data,
    student_teacher_pipeline,
    train,
    write_run,
)

__all__ = [
    "DataBundle", "ExperimentConfig", "OptimizerConfig", "RelatednessSource", "RunLog",
    "SUITE_MODES", "SuiteResult", "TrainResult", "default_suite_config", "dump_predictions", "evaluate", "load_config",
    "load_data", "parse_config", "run_suite", "student_teacher_pipeline", "train", "write_run",
]
