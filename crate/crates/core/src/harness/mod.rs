//! Experiment runner: configuration, seeded execution and summaries.

mod config;
mod runner;
mod summary;

pub use config::{
    load_config, DataSource, ExperimentConfig, ModelConfig, RunConfig, SelectionConfig, Topology, CANONICAL_TOML,
};
pub use runner::{
    load_data, run_experiment, Manifest, RoundRecord, RunReport, TaskSummary, CODE_VERSION, ROUND_COLUMNS,
    TASK_COLUMNS,
};
pub use summary::{
    moving_average, summarize, GroupKey, RewardSeries, Summary, SummaryRow, MOVING_AVERAGE_WINDOW, REWARD_MA_COLUMNS,
    SUMMARY_COLUMNS,
};
