//! Experiment orchestration: configuration, training runs with checkpoints,
//! evaluation and cross-run comparison.

mod compare;
mod config;
mod eval;
mod train;

pub use compare::{
    compare, compare_runs, schedule_preview, ComparisonReport, DormantGap, FinalDormant, RunData, SchedulePreview,
    Spread, TracePoint, MERGED_FIELDS,
};
pub use config::{EvalConfig, ExperimentConfig, Variant, DEFAULT_L2_LAMBDA};
pub use eval::{
    eval_output_path, eval_spec, evaluate, run_evaluation, Controller, EpisodeResult, EvalOverrides, EvalSummary,
    HoverOracle, PolicyController,
};
pub use train::{
    read_metrics, read_recom_log, run_training, Checkpoint, Manifest, RunOptions, RunSummary, CHECKPOINT_DIR,
    EVAL_FILE, LATEST_CHECKPOINT, MANIFEST_FILE, METRICS_FILE, RECOM_FIELDS, RECOM_FILE,
};
