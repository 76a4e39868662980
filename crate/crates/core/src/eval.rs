//! Out-of-sample metrics, per-date series, predicted-quantile tables and
//! signed permutation importance.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{FeatureBlock, MonthStamp};

/// Anything that maps a design matrix to one prediction per row.
pub trait Predictor: Sync {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("metric over zero rows".into()));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Population means, variances and covariance.
fn moments(y: &[f64], yhat: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let (mut vy, mut vp, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        vy += (a - my) * (a - my);
        vp += (b - mp) * (b - mp);
        cov += (a - my) * (b - mp);
    }
    (my, mp, vy / n, vp / n, cov / n)
}

/// Lin's concordance correlation coefficient with population moments.
/// Two constant vectors score 1 when their means agree and 0 otherwise.
pub fn ccc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::InvalidInput("concordance needs at least two rows".into()));
    }
    let (my, mp, vy, vp, cov) = moments(y, yhat);
    if vy == 0.0 && vp == 0.0 {
        return Ok(if my == mp { 1.0 } else { 0.0 });
    }
    Ok((2.0 * cov / ((my - mp) * (my - mp) + vy + vp)).clamp(-1.0, 1.0))
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let (_, _, vy, vp, cov) = moments(y, yhat);
    if vy == 0.0 || vp == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vy * vp).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub mae: f64,
    pub ccc: f64,
    pub n: usize,
}

pub fn overall_metrics(y: &[f64], yhat: &[f64]) -> Result<OverallMetrics> {
    Ok(OverallMetrics {
        mae: mae(y, yhat)?,
        ccc: ccc(y, yhat)?,
        n: y.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateMetrics {
    pub month: MonthStamp,
    pub mae: f64,
    /// Absent for dates with a single row.
    pub ccc: Option<f64>,
    pub n: usize,
}

fn group_by_month(months: &[MonthStamp]) -> BTreeMap<MonthStamp, Vec<usize>> {
    let mut groups: BTreeMap<MonthStamp, Vec<usize>> = BTreeMap::new();
    for (i, m) in months.iter().enumerate() {
        groups.entry(*m).or_default().push(i);
    }
    groups
}

fn pick(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| v[r]).collect()
}

pub fn per_date_metrics(months: &[MonthStamp], y: &[f64], yhat: &[f64]) -> Result<Vec<DateMetrics>> {
    check_pair(y, yhat)?;
    if months.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            found: months.len(),
        });
    }
    group_by_month(months)
        .into_iter()
        .map(|(month, rows)| {
            let (a, b) = (pick(y, &rows), pick(yhat, &rows));
            Ok(DateMetrics {
                month,
                mae: mae(&a, &b)?,
                ccc: if rows.len() >= 2 { Some(ccc(&a, &b)?) } else { None },
                n: rows.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub overall: OverallMetrics,
    pub per_date: Vec<DateMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapQuartileReport {
    pub top: SubsetReport,
    pub bottom: SubsetReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: OverallMetrics,
    pub per_date: Vec<DateMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_cap_quartile: Option<CapQuartileReport>,
}

/// Rows in the top and bottom size quartile of each date's cross-section
/// (`floor(n / 4)` rows each, ties in row order).
pub fn cap_quartile_rows(months: &[MonthStamp], size: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let (mut top, mut bottom) = (Vec::new(), Vec::new());
    for rows in group_by_month(months).into_values() {
        let mut sorted = rows.clone();
        sorted.sort_by(|&a, &b| size[a].total_cmp(&size[b]));
        let q = sorted.len() / 4;
        bottom.extend_from_slice(&sorted[..q]);
        top.extend_from_slice(&sorted[sorted.len() - q..]);
    }
    top.sort_unstable();
    bottom.sort_unstable();
    (top, bottom)
}

fn subset_report(months: &[MonthStamp], y: &[f64], yhat: &[f64], rows: &[usize]) -> Result<SubsetReport> {
    let ms: Vec<MonthStamp> = rows.iter().map(|&r| months[r]).collect();
    let (a, b) = (pick(y, rows), pick(yhat, rows));
    Ok(SubsetReport {
        overall: overall_metrics(&a, &b)?,
        per_date: per_date_metrics(&ms, &a, &b)?,
    })
}

/// Full report; the cap breakdown is included when a size column is given
/// and both quartiles hold at least two rows.
pub fn metric_report(months: &[MonthStamp], y: &[f64], yhat: &[f64], size: Option<&[f64]>) -> Result<MetricReport> {
    let by_cap_quartile = match size {
        Some(size) => {
            let (top, bottom) = cap_quartile_rows(months, size);
            if top.len() >= 2 && bottom.len() >= 2 {
                Some(CapQuartileReport {
                    top: subset_report(months, y, yhat, &top)?,
                    bottom: subset_report(months, y, yhat, &bottom)?,
                })
            } else {
                None
            }
        }
        None => None,
    };
    Ok(MetricReport {
        overall: overall_metrics(y, yhat)?,
        per_date: per_date_metrics(months, y, yhat)?,
        by_cap_quartile,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header and rows of the per-date table: `date,n,mae,ccc` plus
/// top/bottom cap-quartile columns when present.
pub fn per_date_rows(report: &MetricReport) -> (Vec<String>, Vec<Vec<String>>) {
    let caps = report.by_cap_quartile.as_ref();
    let mut header = vec!["date", "n", "mae", "ccc"];
    if caps.is_some() {
        header.extend(["top_mae", "top_ccc", "bottom_mae", "bottom_ccc"]);
    }
    let lookup = |sub: &SubsetReport, m: MonthStamp| -> (String, String) {
        sub.per_date
            .iter()
            .find(|d| d.month == m)
            .map(|d| (d.mae.to_string(), fmt_opt(d.ccc)))
            .unwrap_or_default()
    };
    let rows = report
        .per_date
        .iter()
        .map(|d| {
            let mut rec = vec![d.month.to_string(), d.n.to_string(), d.mae.to_string(), fmt_opt(d.ccc)];
            if let Some(c) = caps {
                let (tm, tc) = lookup(&c.top, d.month);
                let (bm, bc) = lookup(&c.bottom, d.month);
                rec.extend([tm, tc, bm, bc]);
            }
            rec
        })
        .collect();
    (header.into_iter().map(String::from).collect(), rows)
}

pub fn write_per_date_csv(report: &MetricReport, writer: impl Write) -> Result<()> {
    let (header, rows) = per_date_rows(report);
    write_table(writer, &header, &rows)
}

pub(crate) fn write_table(writer: impl Write, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGroup {
    /// 1 = lowest predicted drawdown.
    pub group: usize,
    pub n: usize,
    pub predicted_mean: f64,
    pub realized_mean: f64,
    pub realized_std: f64,
    /// Realized 10th..90th percentiles.
    pub realized_deciles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileWindow {
    pub window: String,
    pub groups: Vec<QuantileGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub windows: Vec<QuantileWindow>,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Group sizes for `n` rows in `k` groups, remainder to the lowest groups.
pub fn group_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|g| n / k + usize::from(g < n % k)).collect()
}

/// Sorts each window's rows by prediction and summarizes realized values in
/// `n_groups` near-equal groups.
pub fn quantile_analysis(windows: &[String], y: &[f64], yhat: &[f64], n_groups: usize) -> Result<QuantileTable> {
    check_pair(y, yhat)?;
    if windows.len() != y.len() || n_groups == 0 {
        return Err(Error::InvalidInput("window labels must match rows and groups be positive".into()));
    }
    let mut by_window: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_window.entry(w.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (label, mut rows) in by_window {
        if rows.len() < n_groups {
            return Err(Error::TooFewRows {
                window: label.to_string(),
                rows: rows.len(),
                needed: n_groups,
            });
        }
        rows.sort_by(|&a, &b| yhat[a].total_cmp(&yhat[b]));
        let mut start = 0;
        let mut groups = Vec::with_capacity(n_groups);
        for (g, size) in group_sizes(rows.len(), n_groups).into_iter().enumerate() {
            let members = &rows[start..start + size];
            start += size;
            let mut realized = pick(y, members);
            let n = size as f64;
            let mean = realized.iter().sum::<f64>() / n;
            let std = (realized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            realized.sort_by(f64::total_cmp);
            groups.push(QuantileGroup {
                group: g + 1,
                n: size,
                predicted_mean: members.iter().map(|&r| yhat[r]).sum::<f64>() / n,
                realized_mean: mean,
                realized_std: std,
                realized_deciles: (1..10).map(|d| quantile_sorted(&realized, d as f64 / 10.0)).collect(),
            });
        }
        out.push(QuantileWindow {
            window: label.to_string(),
            groups,
        });
    }
    Ok(QuantileTable { windows: out })
}

pub fn quantile_rows(table: &QuantileTable) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["window", "group", "n", "predicted_mean", "realized_mean", "realized_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..10).map(|d| format!("p{}", d * 10)));
    let mut rows = Vec::new();
    for win in &table.windows {
        for g in &win.groups {
            let mut rec = vec![
                win.window.clone(),
                g.group.to_string(),
                g.n.to_string(),
                g.predicted_mean.to_string(),
                g.realized_mean.to_string(),
                g.realized_std.to_string(),
            ];
            rec.extend(g.realized_deciles.iter().map(|v| v.to_string()));
            rows.push(rec);
        }
    }
    (header, rows)
}

pub fn write_quantiles_csv(table: &QuantileTable, writer: impl Write) -> Result<()> {
    let (header, rows) = quantile_rows(table);
    write_table(writer, &header, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Ccc,
}

impl Metric {
    pub fn eval(self, y: &[f64], yhat: &[f64]) -> Result<f64> {
        match self {
            Metric::Mae => mae(y, yhat),
            Metric::Ccc => ccc(y, yhat),
        }
    }

    /// Degradation of `permuted` relative to `baseline`; larger is worse.
    pub fn degradation(self, baseline: f64, permuted: f64) -> f64 {
        match self {
            Metric::Mae => permuted - baseline,
            Metric::Ccc => baseline - permuted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub score: f64,
    pub std_error: f64,
    pub sign: Sign,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    pub metric: Metric,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            metric: Metric::Mae,
            repeats: 5,
            seed: 0,
        }
    }
}

/// Slope of `y` on `x` by univariate least squares (0 when `x` is constant).
pub fn univariate_slope(x: &[f64], y: &[f64]) -> f64 {
    let (_, _, vx, _, cov) = moments(x, y);
    if vx > 0.0 {
        cov / vx
    } else {
        0.0
    }
}

/// Per-row value used for the sign of a block: the single column itself, or
/// the category code of the active one-hot column.
fn block_values(x: &DMatrix<f64>, block: &FeatureBlock, columns: &[String]) -> Vec<f64> {
    if block.columns.len() == 1 {
        return x.column(block.columns[0]).iter().copied().collect();
    }
    let codes: Vec<f64> = block
        .columns
        .iter()
        .enumerate()
        .map(|(pos, &c)| {
            columns
                .get(c)
                .and_then(|name| name.rsplit_once('=').and_then(|(_, k)| k.parse::<f64>().ok()))
                .unwrap_or(pos as f64)
        })
        .collect();
    (0..x.nrows())
        .map(|r| {
            block
                .columns
                .iter()
                .zip(&codes)
                .map(|(&c, k)| x[(r, c)] * k)
                .sum()
        })
        .collect()
}

/// Permutation importance with within-date shuffles. One-hot blocks are
/// shuffled jointly. Each block draws from its own stream of the seed, so
/// results do not depend on scheduling.
pub fn permutation_importance(
    model: &dyn Predictor,
    x: &DMatrix<f64>,
    y: &[f64],
    months: &[MonthStamp],
    blocks: &[FeatureBlock],
    columns: &[String],
    opts: &ImportanceOptions,
) -> Result<Vec<ImportanceEntry>> {
    if opts.repeats == 0 {
        return Err(Error::InvalidInput("importance needs at least one repeat".into()));
    }
    if months.len() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::InvalidInput("rows, targets and dates must align".into()));
    }
    let baseline_pred = model.predict_rows(x)?;
    let baseline = opts.metric.eval(y, &baseline_pred)?;
    let dates: Vec<Vec<usize>> = group_by_month(months).into_values().collect();

    let scored: Vec<(String, f64, f64, Sign)> = blocks
        .par_iter()
        .enumerate()
        .map(|(b, block)| -> Result<(String, f64, f64, Sign)> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let mut degr = Vec::with_capacity(opts.repeats);
            let mut xp = x.clone();
            for _ in 0..opts.repeats {
                for rows in &dates {
                    let mut perm = rows.clone();
                    perm.shuffle(&mut rng);
                    for &c in &block.columns {
                        for (&dst, &src) in rows.iter().zip(&perm) {
                            xp[(dst, c)] = x[(src, c)];
                        }
                    }
                }
                let permuted = opts.metric.eval(y, &model.predict_rows(&xp)?)?;
                degr.push(opts.metric.degradation(baseline, permuted));
            }
            let k = degr.len() as f64;
            let mean = degr.iter().sum::<f64>() / k;
            let se = if degr.len() > 1 {
                (degr.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let slope = univariate_slope(&block_values(x, block, columns), &baseline_pred);
            let sign = if slope < 0.0 { Sign::Negative } else { Sign::Positive };
            Ok((block.name.clone(), mean, se, sign))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let (feature, score, std_error, sign) = scored[i].clone();
            ImportanceEntry {
                feature,
                score,
                std_error,
                sign,
                rank: rank + 1,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    struct Linear(Vec<f64>);

    impl Predictor for Linear {
        fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
            Ok((0..x.nrows()).map(|r| (0..x.ncols()).map(|c| x[(r, c)] * self.0[c]).sum()).collect())
        }
    }

    fn month(i: i64) -> MonthStamp {
        MonthStamp::new(2010, 1).unwrap().add_months(i)
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        assert!((mae(&[0.1, 0.3], &[0.2, 0.2]).unwrap() - 0.1).abs() < 1e-15);
        assert!(mae(&[0.1], &[0.1, 0.2]).is_err());
        let y = [0.1, 0.4, 0.25];
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.05).collect();
        assert!((mae(&y, &shifted).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn ccc_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ccc(&y, &y).unwrap(), 1.0);
        assert_eq!(ccc(&y, &[2.5; 4]).unwrap(), 0.0);
        let v = ccc(&y, &[1.5, 2.5, 3.5, 4.5]).unwrap();
        assert!((v - 2.5 / 2.75).abs() < 1e-12);
        assert!((v - 0.9091).abs() < 1e-4);
        assert_eq!(ccc(&[0.2; 3], &[0.2; 3]).unwrap(), 1.0);
        assert_eq!(ccc(&[0.2; 3], &[0.3; 3]).unwrap(), 0.0);
        assert!(ccc(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn ccc_properties(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..60),
            a in 0.01f64..100.0,
            b in -50.0f64..50.0,
            c in -5.0f64..5.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let v = ccc(&y, &p).unwrap();
            prop_assert!(v.abs() <= pearson(&y, &p).unwrap().abs() + 1e-12);
            prop_assert!((v - ccc(&p, &y).unwrap()).abs() < 1e-12);
            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let pa: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            prop_assert!((v - ccc(&ya, &pa).unwrap()).abs() < 1e-9);
            let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
            prop_assert!((mae(&y, &yc).unwrap() - c.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn per_date_breakdown() {
        let months = vec![month(0); 4];
        let y = [0.1, 0.2, 0.3, 0.5];
        let p = [0.15, 0.2, 0.25, 0.4];
        let pd = per_date_metrics(&months, &y, &p).unwrap();
        let all = overall_metrics(&y, &p).unwrap();
        assert_eq!(pd.len(), 1);
        assert_eq!((pd[0].mae, pd[0].ccc, pd[0].n), (all.mae, Some(all.ccc), 4));

        let months = vec![month(0), month(0), month(1), month(1), month(2)];
        let y = [0.1, 0.2, 0.3, 0.4, 0.5];
        let p = [0.1, 0.2, 0.1, 0.5, 0.3];
        let pd = per_date_metrics(&months, &y, &p).unwrap();
        assert_eq!(pd[0].mae, 0.0);
        assert_eq!(pd[0].ccc, Some(1.0));
        assert_eq!(pd[2].ccc, None);
        assert_eq!(pd.iter().map(|d| d.n).sum::<usize>(), 5);
    }

    #[test]
    fn crisis_date_doubles_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut months, mut y, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for m in 0..2 {
            let scale = if m == 1 { 2.0 } else { 1.0 };
            for _ in 0..200 {
                let signal: f64 = rng.gen::<f64>() * 0.2;
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
                months.push(month(m));
                y.push(scale * (signal + noise) + 0.1);
                p.push(signal + 0.1);
            }
        }
        let pd = per_date_metrics(&months, &y, &p).unwrap();
        assert!(pd[1].mae > 1.8 * pd[0].mae);
        assert!(pd[1].ccc.unwrap() > 0.0);
    }

    #[test]
    fn quantile_groups() {
        assert_eq!(group_sizes(103, 10), vec![11, 11, 11, 10, 10, 10, 10, 10, 10, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..103).map(|_| rng.gen::<f64>()).collect();
        let w = vec!["all".to_string(); 103];
        let t = quantile_analysis(&w, &y, &y, 10).unwrap();
        let g = &t.windows[0].groups;
        assert_eq!(g.iter().map(|g| g.n).collect::<Vec<_>>(), group_sizes(103, 10));
        for pair in g.windows(2) {
            assert!(pair[1].realized_mean > pair[0].realized_mean);
        }
        assert!(matches!(
            quantile_analysis(&w[..5], &y[..5], &y[..5], 10),
            Err(Error::TooFewRows { needed: 10, .. })
        ));
    }

    #[test]
    fn quantile_null_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5000;
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let t = quantile_analysis(&vec!["w".to_string(); n], &y, &p, 10).unwrap();
        let overall = y.iter().sum::<f64>() / n as f64;
        for g in &t.windows[0].groups {
            let se = g.realized_std / (g.n as f64).sqrt();
            assert!((g.realized_mean - overall).abs() < 3.0 * se);
        }
    }

    fn importance_fixture() -> (DMatrix<f64>, Vec<f64>, Vec<MonthStamp>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 600;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample(StandardNormal));
        let y: Vec<f64> = (0..n).map(|r| 2.0 * x[(r, 0)] - 0.5 * x[(r, 2)]).collect();
        let months = (0..n).map(|r| month((r / 60) as i64)).collect();
        (x, y, months)
    }

    fn single_blocks(p: usize) -> (Vec<FeatureBlock>, Vec<String>) {
        let cols: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let blocks = cols
            .iter()
            .enumerate()
            .map(|(j, c)| FeatureBlock {
                name: c.clone(),
                columns: vec![j],
            })
            .collect();
        (blocks, cols)
    }

    #[test]
    fn importance_ranks_signs_and_ignored_features() {
        let (x, y, months) = importance_fixture();
        let model = Linear(vec![2.0, 0.0, -0.5, 0.0]);
        let (blocks, cols) = single_blocks(4);
        let opts = ImportanceOptions {
            repeats: 5,
            seed: 9,
            ..Default::default()
        };
        let imp = permutation_importance(&model, &x, &y, &months, &blocks, &cols, &opts).unwrap();
        assert_eq!(imp[0].feature, "f0");
        assert_eq!(imp[0].sign, Sign::Positive);
        assert!(imp[0].score > 0.0);
        assert_eq!(imp[1].feature, "f2");
        assert_eq!(imp[1].sign, Sign::Negative);
        for e in &imp[2..] {
            assert!(e.score.abs() < 1e-12);
        }
        let ranks: Vec<usize> = imp.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
        let again = permutation_importance(&model, &x, &y, &months, &blocks, &cols, &opts).unwrap();
        assert_eq!(imp, again);

        let ccc_imp = permutation_importance(
            &model,
            &x,
            &y,
            &months,
            &blocks,
            &cols,
            &ImportanceOptions {
                metric: Metric::Ccc,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(ccc_imp[0].feature, "f0");
        assert!(ccc_imp[0].score > 0.0);
    }

    #[test]
    fn noise_feature_within_two_standard_errors() {
        let (x, mut y, months) = importance_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        y.iter_mut().for_each(|v| *v += rng.sample::<f64, _>(StandardNormal));
        // The model leans slightly on a feature unrelated to the target.
        let model = Linear(vec![2.0, 0.05, -0.5, 0.0]);
        let (blocks, cols) = single_blocks(4);
        let imp = permutation_importance(
            &model,
            &x,
            &y,
            &months,
            &blocks,
            &cols,
            &ImportanceOptions {
                repeats: 10,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let noise = imp.iter().find(|e| e.feature == "f1").unwrap();
        assert!(noise.score.abs() <= 2.0 * noise.std_error + 1e-3, "{noise:?}");
    }

    #[test]
    fn blocks_permute_jointly_and_sign_by_code() {
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let codes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let x = DMatrix::from_fn(n, 3, |r, c| if codes[r] == c { 1.0 } else { 0.0 });
        let model = Linear(vec![0.0, -1.0, -2.0]);
        let y = model.predict_rows(&x).unwrap();
        let months = (0..n).map(|r| month((r / 40) as i64)).collect::<Vec<_>>();
        let cols = vec!["sector=0".to_string(), "sector=1".into(), "sector=2".into()];
        let blocks = vec![FeatureBlock {
            name: "sector".into(),
            columns: vec![0, 1, 2],
        }];
        let imp =
            permutation_importance(&model, &x, &y, &months, &blocks, &cols, &ImportanceOptions::default()).unwrap();
        assert_eq!(imp.len(), 1);
        assert_eq!(imp[0].sign, Sign::Negative);
        assert!(imp[0].score > 0.0);
    }

    #[test]
    fn report_writers() {
        let months = vec![month(0), month(0), month(0), month(0), month(1), month(1), month(1), month(1)];
        let y = [0.1, 0.2, 0.3, 0.4, 0.2, 0.3, 0.4, 0.6];
        let p = [0.15, 0.2, 0.3, 0.35, 0.25, 0.3, 0.35, 0.5];
        let size = [4.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 4.0];
        let rep = metric_report(&months, &y, &p, Some(&size)).unwrap();
        let caps = rep.by_cap_quartile.as_ref().unwrap();
        assert_eq!(caps.top.overall.n, 2);
        let mut buf = Vec::new();
        write_per_date_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("date,n,mae,ccc,top_mae"));
        let mut buf = Vec::new();
        let t = quantile_analysis(&vec!["a".into(); 8], &y, &p, 2).unwrap();
        write_quantiles_csv(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
