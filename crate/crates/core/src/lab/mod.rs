//! Experiment orchestration: split protocol, tuning, feature-set cases,
//! synthetic panels and report assembly.

pub mod config;
pub mod experiment;
pub mod report;
pub mod split;
pub mod synth;
pub mod tune;

pub use config::{cell_seed, ExperimentConfig, FeatureCase, SEED_ENV};
pub use experiment::{
    prepare, recompute_importance, resolved_config_json, run_experiment, ExperimentOutcome, ModelOutcome, PreparedData,
};
pub use report::render_report;
pub use split::{MonthRange, SplitPart, SplitPreset, SplitSpec};
pub use synth::{SyntheticData, SyntheticSpec};
pub use tune::{tune, TuneResult};
