"""Experiment runner and command-line interface."""

from .config import DEMO_TRANSFORMS, METHODS, ConfigError, ExperimentConfig
from .report import ReportError, ReportTable, table_csv, table_from_csv, table_from_runs, table_text, write_report
from .runner import (
    RUN_FIELDS,
    SUMMARY_FIELDS,
    FrameIngestError,
    RunLock,
    RunLockedError,
    RunResult,
    enumerate_states,
    eval_checkpoint,
    evaluate,
    export_frames,
    imitate,
    ingest_frames,
    injectivity_text,
    load_policy,
    load_run_demos,
    make_policy,
    record_demos,
    train_expert,
    verify_injectivity,
)

__all__ = [
    "ConfigError", "DEMO_TRANSFORMS", "ExperimentConfig", "FrameIngestError", "METHODS", "RUN_FIELDS",
    "ReportError", "ReportTable", "RunLock", "RunLockedError", "RunResult", "SUMMARY_FIELDS", "enumerate_states",
    "eval_checkpoint", "evaluate", "export_frames", "imitate", "ingest_frames", "injectivity_text", "load_policy",
    "load_run_demos", "make_policy", "record_demos", "table_csv", "table_from_csv", "table_from_runs",
    "table_text", "train_expert", "verify_injectivity", "write_report",
]
