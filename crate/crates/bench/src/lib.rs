//! Criterion benchmarks for the hot paths: drawdown windows, the linear
//! solvers, tree ensembles, one MLP epoch and permutation importance.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use drawdown_lab_core::dimred::{pcr_fit, pls_fit};
use drawdown_lab_core::drawdown::max_drawdown;
use drawdown_lab_core::eval::{permutation_importance, ImportanceOptions};
use drawdown_lab_core::linmod::{enet_fit, lasso_fit, lasso_lambda_max};
use drawdown_lab_core::neural::{mlp_fit, MlpSpec};
use drawdown_lab_core::panel::FeatureBlock;
use drawdown_lab_core::treemod::{boost_fit, forest_fit, tree_fit, BoostOptions, ForestOptions};
use drawdown_lab_core::model::fit_model;
use drawdown_lab_core::{Hyperparams, MonthStamp};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stacked cross-section: `n_months` dates of `per_month` rows each.
pub struct Fixture {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub months: Vec<MonthStamp>,
    pub columns: Vec<String>,
}

impl Fixture {
    pub fn new(n_months: usize, per_month: usize, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_months * per_month;
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| {
                let lin: f64 = (0..p.min(4)).map(|j| x[(i, j)] * 0.05 / (j + 1) as f64).sum();
                (0.15 + lin + 0.01 * rng.gen_range(-1.0..1.0)).max(0.0)
            })
            .collect();
        let start = MonthStamp::new(2000, 1).unwrap();
        let months = (0..n).map(|i| start.add_months((i / per_month) as i64)).collect();
        Fixture {
            x,
            y,
            months,
            columns: (0..p).map(|j| format!("f{j}")).collect(),
        }
    }

    pub fn y_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    pub fn blocks(&self) -> Vec<FeatureBlock> {
        (0..self.columns.len())
            .map(|j| FeatureBlock {
                name: self.columns[j].clone(),
                columns: vec![j],
            })
            .collect()
    }
}

/// Daily random-walk price path of `n` observations.
pub fn price_path(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = 100.0;
    (0..n)
        .map(|_| {
            p *= (0.02 * rng.gen_range(-1.0..1.0_f64)).exp();
            p
        })
        .collect()
}

fn drawdown(c: &mut Criterion) {
    let mut g = c.benchmark_group("max_drawdown");
    for n in [252, 2520, 25200] {
        let path = price_path(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &path, |b, p| b.iter(|| max_drawdown(black_box(p))));
    }
    g.finish();
}

fn linear(c: &mut Criterion) {
    let f = Fixture::new(60, 100, 40, 2);
    let y = f.y_vec();
    let lmax = lasso_lambda_max(&f.x, &y);
    let mut g = c.benchmark_group("linear");
    g.sample_size(20);
    g.bench_function("lasso", |b| b.iter(|| lasso_fit(&f.x, &y, 0.05 * lmax).unwrap()));
    g.bench_function("enet", |b| b.iter(|| enet_fit(&f.x, &y, 0.05 * lmax, 0.01).unwrap()));
    g.bench_function("pcr_k10", |b| b.iter(|| pcr_fit(&f.x, &y, 10).unwrap()));
    g.bench_function("pls_k5", |b| b.iter(|| pls_fit(&f.x, &y, 5).unwrap()));
    g.finish();
}

fn trees(c: &mut Criterion) {
    let f = Fixture::new(30, 100, 20, 3);
    let mut g = c.benchmark_group("trees");
    g.sample_size(10);
    g.bench_function("tree_depth6", |b| b.iter(|| tree_fit(&f.x, &f.y, 6, 5).unwrap()));
    let forest = ForestOptions {
        n_trees: 50,
        max_depth: 6,
        ..ForestOptions::default()
    };
    g.bench_function("forest_50", |b| b.iter(|| forest_fit(&f.x, &f.y, &forest).unwrap()));
    let boost = BoostOptions {
        rounds: 50,
        max_depth: 3,
        ..BoostOptions::default()
    };
    g.bench_function("boost_50", |b| b.iter(|| boost_fit(&f.x, &f.y, &boost).unwrap()));
    g.finish();
}

fn mlp(c: &mut Criterion) {
    let f = Fixture::new(30, 100, 20, 4);
    let spec = MlpSpec {
        epochs: 1,
        ..MlpSpec::default()
    };
    let mut g = c.benchmark_group("mlp");
    g.sample_size(20);
    g.bench_function("one_epoch_3000x20", |b| b.iter(|| mlp_fit(&f.x, &f.y, &spec).unwrap()));
    g.finish();
}

fn importance(c: &mut Criterion) {
    let f = Fixture::new(24, 100, 20, 5);
    let model = fit_model(&Hyperparams::Ols, &f.x, &f.y, None, 0).unwrap();
    let blocks = f.blocks();
    let opts = ImportanceOptions {
        repeats: 5,
        ..ImportanceOptions::default()
    };
    let mut g = c.benchmark_group("importance");
    g.sample_size(10);
    g.bench_function("ols_20_features_5_repeats", |b| {
        b.iter(|| permutation_importance(&model, &f.x, &f.y, &f.months, &blocks, &f.columns, &opts).unwrap())
    });
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    drawdown(c);
    linear(c);
    trees(c);
    mlp(c);
    importance(c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_groups_rows_by_month() {
        let f = Fixture::new(3, 4, 2, 0);
        assert_eq!(f.x.nrows(), 12);
        assert_eq!(f.months[3], f.months[0]);
        assert_ne!(f.months[4], f.months[3]);
        assert!(f.y.iter().all(|v| *v >= 0.0));
        assert_eq!(f.blocks().len(), 2);
    }

    #[test]
    fn price_path_is_positive() {
        let p = price_path(100, 1);
        assert!(p.iter().all(|v| *v > 0.0));
        let dd = max_drawdown(&p).unwrap();
        assert!((0.0..1.0).contains(&dd));
    }
}
