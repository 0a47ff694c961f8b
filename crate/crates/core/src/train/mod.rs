//! Unified training pipeline: configs, seeded runs with early stopping,
//! run directories and multi-seed aggregation.

mod adam;
mod config;
mod multi;
mod run;

pub use adam::Adam;
pub use config::{get_config_regression, AdamConfig, LossKind, TrainConfig, DEFAULT_SEEDS};
pub use multi::{
    history_jsonl, multi_seed_run, read_aggregate, seed_dir_name, timestamped_run_root, write_aggregate, write_run,
    Aggregate, MetricStats, MultiSeedResult, SeedSummary, AGGREGATE_FILE, CHECKPOINT_DIR, HISTORY_FILE, REPS_FILE,
    REPS_INDEX, RUN_CONFIG,
};
pub use run::{evaluate_indices, predict_indices, train_run, EarlyStopping, EpochRecord, Representations, RunResult};
