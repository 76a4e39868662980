//! Exhaustive grid search on the validation range.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::model::{fit_model, Hyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparams: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Why the point could not be scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub metric: Metric,
    pub best: Hyperparams,
    pub best_score: f64,
    pub scores: Vec<GridScore>,
}

/// True when `a` beats `b` under `metric` (strictly, so ties keep the first).
pub fn improves(metric: Metric, a: f64, b: f64) -> bool {
    match metric {
        Metric::Mae => a < b,
        Metric::Ccc => a > b,
    }
}

/// Fits every grid point on the training rows and scores it on the
/// validation rows. Points that fail to fit are logged and skipped; the
/// search fails only when none can be scored.
pub fn tune(
    grid: &[Hyperparams],
    train: (&DMatrix<f64>, &[f64]),
    validation: (&DMatrix<f64>, &[f64]),
    metric: Metric,
    seed: u64,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let scores: Vec<GridScore> = grid
        .par_iter()
        .map(|hp| {
            let scored = fit_model(hp, train.0, train.1, Some(validation), seed)
                .and_then(|m| m.predict(validation.0))
                .and_then(|pred| metric.eval(validation.1, &pred))
                .and_then(|s| {
                    if s.is_finite() {
                        Ok(s)
                    } else {
                        Err(Error::InvalidInput("non-finite validation score".into()))
                    }
                });
            match scored {
                Ok(s) => GridScore {
                    hyperparams: hp.clone(),
                    score: Some(s),
                    error: None,
                },
                Err(e) => GridScore {
                    hyperparams: hp.clone(),
                    score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    for s in &scores {
        match (s.score, &s.error) {
            (Some(v), _) => log::debug!("grid {:?}: {metric:?} = {v}", s.hyperparams),
            (None, Some(e)) => log::warn!("grid {:?} skipped: {e}", s.hyperparams),
            _ => {}
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = s.score {
            if best.is_none_or(|(_, b)| improves(metric, v, b)) {
                best = Some((i, v));
            }
        }
    }
    let Some((i, best_score)) = best else {
        let first = scores.iter().find_map(|s| s.error.clone()).unwrap_or_default();
        return Err(Error::InvalidInput(format!("no grid point could be scored: {first}")));
    };
    Ok(TuneResult {
        metric,
        best: scores[i].hyperparams.clone(),
        best_score,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)] + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn single_point_grid_is_returned_and_logged() {
        let (xt, yt) = data(200, 1);
        let (xv, yv) = data(100, 2);
        let r = tune(&[Hyperparams::Ols], (&xt, &yt), (&xv, &yv), Metric::Mae, 0).unwrap();
        assert_eq!(r.best, Hyperparams::Ols);
        assert_eq!(r.scores.len(), 1);
        assert_eq!(r.scores[0].score, Some(r.best_score));
    }

    #[test]
    fn over_shrinkage_loses() {
        let (xt, yt) = data(300, 3);
        let (xv, yv) = data(150, 4);
        let grid: Vec<Hyperparams> = [0.0, 0.1, 1e6].iter().map(|&lambda| Hyperparams::Ridge { lambda }).collect();
        let r = tune(&grid, (&xt, &yt), (&xv, &yv), Metric::Mae, 0).unwrap();
        assert_ne!(r.best, Hyperparams::Ridge { lambda: 1e6 });
        let by_ccc = tune(&grid, (&xt, &yt), (&xv, &yv), Metric::Ccc, 0).unwrap();
        assert_ne!(by_ccc.best, Hyperparams::Ridge { lambda: 1e6 });
    }

    #[test]
    fn ties_keep_grid_order_and_failures_are_skipped() {
        let (xt, yt) = data(100, 5);
        let (xv, yv) = data(50, 6);
        let grid = vec![Hyperparams::Pcr { components: 9 }, Hyperparams::Ols, Hyperparams::Ols];
        let r = tune(&grid, (&xt, &yt), (&xv, &yv), Metric::Mae, 0).unwrap();
        assert!(r.scores[0].error.is_some());
        assert_eq!(r.scores[1].score, r.scores[2].score);
        assert_eq!(r.best, Hyperparams::Ols);
        assert!(matches!(tune(&[], (&xt, &yt), (&xv, &yv), Metric::Mae, 0), Err(Error::EmptyGrid)));
    }
}
