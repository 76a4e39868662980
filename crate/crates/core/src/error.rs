use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected} columns, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("no feature matches the requested groups: {groups}")]
    EmptySelection { groups: String },

    #[error("no rows between {from} and {to}")]
    EmptySlice { from: String, to: String },

    #[error("max drawdown needs at least 2 prices, got {0}")]
    TooFewPrices(usize),

    #[error("price at position {index} is not strictly positive: {value}")]
    NonPositivePrice { index: usize, value: f64 },

    #[error("coordinate descent did not converge after {iterations} sweeps (last max change {max_change:e})")]
    NonConvergence {
        iterations: usize,
        max_change: f64,
        coefficients: Vec<f64>,
    },

    #[error("requested {requested} components but the centered design has rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("degenerate component: the target has no covariance with any predictor")]
    DegenerateComponent,

    #[error("training diverged at epoch {epoch} (last finite loss {last_finite_loss})")]
    Divergence { epoch: usize, last_finite_loss: f64 },

    #[error("boosting loss became non-finite at stage {stage}")]
    BoostDivergence { stage: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("window {window} has {rows} rows, need at least {needed}")]
    TooFewRows {
        window: String,
        rows: usize,
        needed: usize,
    },

    #[error("hyperparameter grid is empty")]
    EmptyGrid,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookahead violation: {0}")]
    Lookahead(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
