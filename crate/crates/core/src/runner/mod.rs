//! Config-driven experiment runner: load, preprocess, fit the classical
//! baselines and the transformer stack, score on held-out data and write
//! report tables plus loss curves.

mod config;
mod pipeline;
mod report;

pub use config::{
    check_files, read_config, validate_config, DatasetConfig, ExperimentConfig, PreprocessConfig, PretrainSettings, StackSettings, TokenizerConfig,
    TransformerSettings,
};
pub use pipeline::{evaluate_stage, load_bundle, prep_stage, run_experiment, stack_stage, train_stage};
pub use report::{emit_report, read_table_csv, CurveRecord, MeanScores, ModelResult, ReportBundle, RunMetadata, SeedScore, STACK_ROW};
