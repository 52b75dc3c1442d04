//! Experiment orchestration: configuration, run directories and commands.

mod commands;
mod config;
mod manifest;
mod records;
mod render;
mod sweep;
mod targets;

pub use commands::{
    evaluate, gen_data, load_model, make_target, render, run_hybrid, run_rl, sweep, train_sl, RunOutput,
    MODEL_CONFIG_FILE, MODEL_FILE, RECORDS_FILE,
};
pub use config::{parse_toml, Config, DatasetConfig, Profile, RegressionConfig, RlConfig, SweepConfig};
pub use manifest::{code_version, parse_manifest, Manifest, Run, MANIFEST_FILE};
pub use records::{
    evaluate as evaluate_records, mean_std, median, parse_records, records_to_json, Comparison, DesignRecord, Method,
    MethodStats, Report,
};
pub use render::{overlay_rows, render_pgm};
pub use sweep::{run_regression, sweep_table_text, table_rows, SweepResult, SweepRow, SweepTable};
pub use targets::{standin_design, standin_targets, HiddenTarget, TARGET_NAMES};
