//! The nine regressors behind one fit/predict contract, plus their
//! hyperparameter grids.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dimred::{pcr_fit, pls_fit, ReducedLinearModel};
use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::linmod::{enet_fit, lasso_fit, ols_fit, ridge_fit, LinearModel};
use crate::neural::{mlp_fit_with_validation, Activation, MlpModel, MlpSpec};
use crate::treemod::{boost_fit, forest_fit, BoostOptions, BoostedModel, ForestModel, ForestOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "OLS")]
    Ols,
    Lasso,
    Ridge,
    #[serde(rename = "ENet")]
    Enet,
    #[serde(rename = "PLS")]
    Pls,
    #[serde(rename = "PCR")]
    Pcr,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "XGBoost")]
    Xgboost,
    #[serde(rename = "MLP")]
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Ols,
        ModelKind::Lasso,
        ModelKind::Ridge,
        ModelKind::Enet,
        ModelKind::Pls,
        ModelKind::Pcr,
        ModelKind::Rf,
        ModelKind::Xgboost,
        ModelKind::Mlp,
    ];

    pub const NON_LINEAR: [ModelKind; 3] = [ModelKind::Rf, ModelKind::Xgboost, ModelKind::Mlp];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ols => "OLS",
            ModelKind::Lasso => "Lasso",
            ModelKind::Ridge => "Ridge",
            ModelKind::Enet => "ENet",
            ModelKind::Pls => "PLS",
            ModelKind::Pcr => "PCR",
            ModelKind::Rf => "RF",
            ModelKind::Xgboost => "XGBoost",
            ModelKind::Mlp => "MLP",
        }
    }

    pub fn is_non_linear(&self) -> bool {
        Self::NON_LINEAR.contains(self)
    }

    /// Stable per-model offset for seed derivation.
    pub fn seed_offset(&self) -> u64 {
        Self::ALL.iter().position(|k| k == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum Hyperparams {
    #[serde(rename = "OLS")]
    Ols,
    Lasso { lambda: f64 },
    Ridge { lambda: f64 },
    #[serde(rename = "ENet")]
    Enet { lambda1: f64, lambda2: f64 },
    #[serde(rename = "PLS")]
    Pls { components: usize },
    #[serde(rename = "PCR")]
    Pcr { components: usize },
    #[serde(rename = "RF")]
    Rf {
        n_trees: usize,
        max_depth: usize,
        feature_fraction: f64,
        min_leaf_size: usize,
        row_fraction: f64,
    },
    #[serde(rename = "XGBoost")]
    Xgboost {
        rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        lambda: f64,
        gamma: f64,
        subsample: f64,
    },
    #[serde(rename = "MLP")]
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
        learning_rate: f64,
        l2_decay: f64,
        epochs: usize,
        batch_size: usize,
    },
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Ols => ModelKind::Ols,
            Hyperparams::Lasso { .. } => ModelKind::Lasso,
            Hyperparams::Ridge { .. } => ModelKind::Ridge,
            Hyperparams::Enet { .. } => ModelKind::Enet,
            Hyperparams::Pls { .. } => ModelKind::Pls,
            Hyperparams::Pcr { .. } => ModelKind::Pcr,
            Hyperparams::Rf { .. } => ModelKind::Rf,
            Hyperparams::Xgboost { .. } => ModelKind::Xgboost,
            Hyperparams::Mlp { .. } => ModelKind::Mlp,
        }
    }
}

/// Fitted parameters of any of the nine models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainedModel {
    Linear(LinearModel),
    Reduced(ReducedLinearModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Linear(m) => Ok(m.predict(x)?.iter().copied().collect()),
            TrainedModel::Reduced(m) => Ok(m.predict(x)?.iter().copied().collect()),
            TrainedModel::Forest(m) => m.predict(x),
            TrainedModel::Boosted(m) => m.predict(x),
            TrainedModel::Mlp(m) => m.predict(x),
        }
    }
}

impl Predictor for TrainedModel {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// Fits one model. `validation` enables early stopping for the network;
/// `seed` drives every stochastic model.
pub fn fit_model(
    hp: &Hyperparams,
    x: &DMatrix<f64>,
    y: &[f64],
    validation: Option<(&DMatrix<f64>, &[f64])>,
    seed: u64,
) -> Result<TrainedModel> {
    let yv = DVector::from_column_slice(y);
    Ok(match hp {
        Hyperparams::Ols => TrainedModel::Linear(ols_fit(x, &yv)?),
        Hyperparams::Lasso { lambda } => TrainedModel::Linear(lasso_fit(x, &yv, *lambda)?),
        Hyperparams::Ridge { lambda } => TrainedModel::Linear(ridge_fit(x, &yv, *lambda)?),
        Hyperparams::Enet { lambda1, lambda2 } => TrainedModel::Linear(enet_fit(x, &yv, *lambda1, *lambda2)?),
        Hyperparams::Pls { components } => TrainedModel::Reduced(pls_fit(x, &yv, *components)?),
        Hyperparams::Pcr { components } => TrainedModel::Reduced(pcr_fit(x, &yv, *components)?),
        Hyperparams::Rf {
            n_trees,
            max_depth,
            feature_fraction,
            min_leaf_size,
            row_fraction,
        } => {
            let p = x.ncols();
            let subset = ((p as f64 * feature_fraction).round() as usize).clamp(1, p.max(1));
            TrainedModel::Forest(forest_fit(
                x,
                y,
                &ForestOptions {
                    n_trees: *n_trees,
                    row_fraction: *row_fraction,
                    feature_subset: Some(subset),
                    max_depth: *max_depth,
                    min_leaf_size: *min_leaf_size,
                    bootstrap: true,
                    seed,
                },
            )?)
        }
        Hyperparams::Xgboost {
            rounds,
            learning_rate,
            max_depth,
            lambda,
            gamma,
            subsample,
        } => TrainedModel::Boosted(boost_fit(
            x,
            y,
            &BoostOptions {
                rounds: *rounds,
                learning_rate: *learning_rate,
                gamma: *gamma,
                lambda: *lambda,
                max_depth: *max_depth,
                min_leaf_size: 1,
                subsample: *subsample,
                colsample: None,
                seed,
            },
        )?),
        Hyperparams::Mlp {
            hidden,
            activation,
            learning_rate,
            l2_decay,
            epochs,
            batch_size,
        } => {
            let spec = MlpSpec {
                learning_rate: *learning_rate,
                l2_decay: *l2_decay,
                epochs: *epochs,
                batch_size: *batch_size,
                seed,
                ..MlpSpec::default().with_hidden(hidden.clone(), *activation)
            };
            TrainedModel::Mlp(mlp_fit_with_validation(x, y, validation, &spec)?)
        }
    })
}

/// Model file: what was fit, on which columns, and the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub columns: Vec<String>,
    pub model: TrainedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyGrid {
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnetGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl Default for EnetGrid {
    fn default() -> Self {
        EnetGrid {
            lambda1: vec![1e-5, 1e-4, 1e-3],
            lambda2: vec![1e-4, 1e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentGrid {
    pub components: Vec<usize>,
}

impl Default for ComponentGrid {
    fn default() -> Self {
        ComponentGrid {
            components: vec![1, 2, 3, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub feature_fraction: Vec<f64>,
    pub min_leaf_size: Vec<usize>,
    pub row_fraction: Vec<f64>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_trees: vec![100],
            max_depth: vec![4, 6, 8],
            feature_fraction: vec![0.33, 0.66],
            min_leaf_size: vec![5],
            row_fraction: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostGrid {
    pub rounds: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub subsample: Vec<f64>,
}

impl Default for BoostGrid {
    fn default() -> Self {
        BoostGrid {
            rounds: vec![100, 300],
            learning_rate: vec![0.05, 0.1],
            max_depth: vec![2, 3, 4],
            lambda: vec![1.0],
            gamma: vec![0.0],
            subsample: vec![0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpGrid {
    pub hidden: Vec<Vec<usize>>,
    pub activation: Vec<Activation>,
    pub learning_rate: Vec<f64>,
    pub l2_decay: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for MlpGrid {
    fn default() -> Self {
        MlpGrid {
            hidden: vec![vec![32, 16], vec![64, 32]],
            activation: vec![Activation::Relu],
            learning_rate: vec![1e-3, 3e-3],
            l2_decay: vec![1e-5],
            epochs: vec![200],
            batch_size: vec![256],
        }
    }
}

/// Per-model grids; each expands to the Cartesian product of its lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub lasso: PenaltyGrid,
    pub ridge: PenaltyGrid,
    pub enet: EnetGrid,
    pub pls: ComponentGrid,
    pub pcr: ComponentGrid,
    pub rf: ForestGrid,
    pub xgboost: BoostGrid,
    pub mlp: MlpGrid,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            lasso: PenaltyGrid {
                lambda: vec![1e-5, 1e-4, 1e-3, 1e-2],
            },
            ridge: PenaltyGrid {
                lambda: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            },
            enet: EnetGrid::default(),
            pls: ComponentGrid::default(),
            pcr: ComponentGrid::default(),
            rf: ForestGrid::default(),
            xgboost: BoostGrid::default(),
            mlp: MlpGrid::default(),
        }
    }
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        PenaltyGrid {
            lambda: vec![1e-4, 1e-3, 1e-2],
        }
    }
}

impl Grids {
    /// Grid points for one model in row-major order of the listed fields.
    /// Component counts above `n_features` are dropped.
    pub fn expand(&self, kind: ModelKind, n_features: usize) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        match kind {
            ModelKind::Ols => out.push(Hyperparams::Ols),
            ModelKind::Lasso => out.extend(self.lasso.lambda.iter().map(|&lambda| Hyperparams::Lasso { lambda })),
            ModelKind::Ridge => out.extend(self.ridge.lambda.iter().map(|&lambda| Hyperparams::Ridge { lambda })),
            ModelKind::Enet => {
                for &lambda1 in &self.enet.lambda1 {
                    for &lambda2 in &self.enet.lambda2 {
                        out.push(Hyperparams::Enet { lambda1, lambda2 });
                    }
                }
            }
            ModelKind::Pls | ModelKind::Pcr => {
                let grid = if kind == ModelKind::Pls { &self.pls } else { &self.pcr };
                for &components in grid.components.iter().filter(|&&k| k >= 1 && k <= n_features) {
                    out.push(if kind == ModelKind::Pls {
                        Hyperparams::Pls { components }
                    } else {
                        Hyperparams::Pcr { components }
                    });
                }
            }
            ModelKind::Rf => {
                let g = &self.rf;
                for &n_trees in &g.n_trees {
                    for &max_depth in &g.max_depth {
                        for &feature_fraction in &g.feature_fraction {
                            for &min_leaf_size in &g.min_leaf_size {
                                for &row_fraction in &g.row_fraction {
                                    out.push(Hyperparams::Rf {
                                        n_trees,
                                        max_depth,
                                        feature_fraction,
                                        min_leaf_size,
                                        row_fraction,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            ModelKind::Xgboost => {
                let g = &self.xgboost;
                for &rounds in &g.rounds {
                    for &learning_rate in &g.learning_rate {
                        for &max_depth in &g.max_depth {
                            for &lambda in &g.lambda {
                                for &gamma in &g.gamma {
                                    for &subsample in &g.subsample {
                                        out.push(Hyperparams::Xgboost {
                                            rounds,
                                            learning_rate,
                                            max_depth,
                                            lambda,
                                            gamma,
                                            subsample,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
            ModelKind::Mlp => {
                let g = &self.mlp;
                for hidden in &g.hidden {
                    for &activation in &g.activation {
                        for &learning_rate in &g.learning_rate {
                            for &l2_decay in &g.l2_decay {
                                for &epochs in &g.epochs {
                                    for &batch_size in &g.batch_size {
                                        out.push(Hyperparams::Mlp {
                                            hidden: hidden.clone(),
                                            activation,
                                            learning_rate,
                                            l2_decay,
                                            epochs,
                                            batch_size,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(120, 3, |_, _| rng.gen::<f64>() - 0.5);
        let y = (0..120).map(|r| 0.3 + 0.2 * x[(r, 0)] - 0.1 * x[(r, 2)]).collect();
        (x, y)
    }

    #[test]
    fn names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("SVM".parse::<ModelKind>().is_err());
    }

    #[test]
    fn every_model_fits_predicts_and_round_trips() {
        let (x, y) = data();
        let grids = Grids {
            rf: ForestGrid {
                n_trees: vec![10],
                ..Default::default()
            },
            xgboost: BoostGrid {
                rounds: vec![20],
                ..Default::default()
            },
            mlp: MlpGrid {
                hidden: vec![vec![8]],
                epochs: vec![5],
                ..Default::default()
            },
            ..Default::default()
        };
        for kind in ModelKind::ALL {
            let points = grids.expand(kind, 3);
            assert!(!points.is_empty(), "{kind}");
            assert!(points.iter().all(|h| h.kind() == kind));
            let hp = &points[0];
            let m = fit_model(hp, &x, &y, None, 7).unwrap();
            let p = m.predict(&x).unwrap();
            assert_eq!(p.len(), 120);
            let saved = SavedModel {
                kind,
                hyperparams: hp.clone(),
                seed: 7,
                columns: vec!["a".into(), "b".into(), "c".into()],
                model: m,
            };
            let back: SavedModel = serde_json::from_str(&serde_json::to_string(&saved).unwrap()).unwrap();
            assert_eq!(back.model.predict(&x).unwrap(), p);
        }
    }

    #[test]
    fn grid_expansion_counts() {
        let g = Grids::default();
        assert_eq!(g.expand(ModelKind::Enet, 5).len(), 9);
        assert_eq!(g.expand(ModelKind::Pcr, 3).len(), 3);
        assert_eq!(g.expand(ModelKind::Xgboost, 5).len(), 12);
        assert_eq!(g.expand(ModelKind::Ols, 5), vec![Hyperparams::Ols]);
    }
}
