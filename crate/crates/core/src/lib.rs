//! Cross-sectional maximum-drawdown forecasting.
//!
//! Builds one-year-forward drawdown targets from price series, runs the
//! per-date preprocessing chain over a pooled (security, month) panel, fits
//! nine regressors and evaluates them out of sample.

pub mod dimred;
pub mod drawdown;
pub mod error;
pub mod eval;
pub mod lab;
pub mod linalg;
pub mod linmod;
pub mod model;
pub mod neural;
pub mod panel;
pub mod prep;
pub mod treemod;

pub use error::{Error, Result};
pub use drawdown::{DrawdownTarget, PriceSeries};
pub use eval::{ImportanceEntry, Metric, MetricReport, QuantileTable};
pub use lab::{ExperimentConfig, FeatureCase, MonthRange, SplitSpec, SyntheticSpec};
pub use model::{Hyperparams, ModelKind, SavedModel, TrainedModel};
pub use panel::{Design, FeatureSpec, MonthStamp, PanelDataset, SecurityId};
