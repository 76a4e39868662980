//! Preprocessing chain: universe filters, lags, cross-sectional z-scores,
//! imputation and one-hot encoding of categoricals.
//!
//! All statistics are computed within a single date's cross-section.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::drawdown::{attach_targets, DrawdownTarget, TargetJoinStats};
use crate::error::{Error, Result};
use crate::panel::{FeatureKind, FeatureSpec, MonthStamp, PanelDataset, RowKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub min_consecutive_months: u32,
    pub drop_smallest_fraction: f64,
    pub require_positive: Vec<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_consecutive_months: 12,
            drop_smallest_fraction: 0.0005,
            require_positive: vec!["bm".into()],
        }
    }
}

impl FilterPolicy {
    fn validate(&self, ds: &PanelDataset) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_smallest_fraction) {
            return Err(Error::InvalidInput(format!(
                "drop_smallest_fraction {} outside [0, 1)",
                self.drop_smallest_fraction
            )));
        }
        for name in &self.require_positive {
            if ds.feature_index(name).is_none() {
                return Err(Error::InvalidInput(format!("filter feature `{name}` not in panel")));
            }
        }
        Ok(())
    }
}

/// Numeric cells take the date mean, binary/categorical cells the date median.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputePolicy;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterStats {
    pub rows_in: usize,
    pub dropped_non_positive: usize,
    pub dropped_small: usize,
    pub dropped_short_history: usize,
    pub securities_removed: usize,
}

/// Per-date filter, then a whole-security history-length filter.
pub fn apply_filters(
    ds: &PanelDataset,
    policy: &FilterPolicy,
    size_feature: &str,
) -> Result<PanelDataset> {
    apply_filters_audited(ds, policy, size_feature).map(|(d, _)| d)
}

pub fn apply_filters_audited(
    ds: &PanelDataset,
    policy: &FilterPolicy,
    size_feature: &str,
) -> Result<(PanelDataset, FilterStats)> {
    policy.validate(ds)?;
    let size_col = ds
        .feature_index(size_feature)
        .ok_or_else(|| Error::InvalidInput(format!("size feature `{size_feature}` not in panel")))?;
    let positive_cols: Vec<usize> = policy
        .require_positive
        .iter()
        .filter_map(|n| ds.feature_index(n))
        .collect();
    let mut stats = FilterStats {
        rows_in: ds.n_rows(),
        ..Default::default()
    };
    let mut keep = vec![true; ds.n_rows()];
    for (_, range) in ds.date_groups() {
        for r in range.clone() {
            if positive_cols
                .iter()
                .any(|&j| ds.value(r, j).is_some_and(|v| v <= 0.0))
            {
                keep[r] = false;
                stats.dropped_non_positive += 1;
            }
        }
        let mut sized: Vec<(f64, usize)> = range
            .clone()
            .filter(|&r| keep[r])
            .filter_map(|r| ds.value(r, size_col).map(|v| (v, r)))
            .collect();
        let n_drop = (sized.len() as f64 * policy.drop_smallest_fraction).ceil() as usize;
        sized.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, r) in sized.iter().take(n_drop) {
            keep[r] = false;
            stats.dropped_small += 1;
        }
    }

    // Longest run of consecutive surviving months per security.
    let mut months_by_sec: BTreeMap<&crate::panel::SecurityId, Vec<MonthStamp>> = BTreeMap::new();
    for (r, k) in ds.keys().iter().enumerate() {
        if keep[r] {
            months_by_sec.entry(&k.security).or_default().push(k.month);
        }
    }
    let mut long_enough = std::collections::HashSet::new();
    for (sec, months) in &months_by_sec {
        let mut best = 0u32;
        let mut run = 0u32;
        let mut prev: Option<MonthStamp> = None;
        for m in months {
            run = match prev {
                Some(p) if p.months_until(*m) == 1 => run + 1,
                _ => 1,
            };
            best = best.max(run);
            prev = Some(*m);
        }
        if best >= policy.min_consecutive_months {
            long_enough.insert((*sec).clone());
        }
    }
    stats.securities_removed = months_by_sec.len() - long_enough.len();
    for (r, k) in ds.keys().iter().enumerate() {
        if keep[r] && !long_enough.contains(&k.security) {
            keep[r] = false;
            stats.dropped_short_history += 1;
        }
    }
    if !keep.iter().any(|k| *k) {
        return Err(Error::InvalidInput("filters removed every row".into()));
    }
    Ok((ds.filter_rows(&keep), stats))
}

/// Shifts every column by its `lag_months`: the value at (i, t) becomes the
/// raw value at (i, t - lag), or missing if that row does not exist.
pub fn apply_lags(ds: &PanelDataset) -> PanelDataset {
    if ds.features().iter().all(|f| f.lag_months == 0) {
        return ds.clone();
    }
    let lookup = ds.row_lookup();
    let p = ds.n_features();
    let mut values = Vec::with_capacity(ds.n_rows() * p);
    let mut missing = Vec::with_capacity(ds.n_rows() * p);
    for (r, k) in ds.keys().iter().enumerate() {
        for (j, f) in ds.features().iter().enumerate() {
            let src = if f.lag_months == 0 {
                Some(r)
            } else {
                let m = k.month.add_months(-(f.lag_months as i64));
                lookup.get(&(k.security.clone(), m)).copied()
            };
            match src.and_then(|s| ds.value(s, j)) {
                Some(v) => {
                    values.push(v);
                    missing.push(false);
                }
                None => {
                    values.push(f64::NAN);
                    missing.push(true);
                }
            }
        }
    }
    PanelDataset::from_parts(
        ds.features().to_vec(),
        ds.keys().to_vec(),
        values,
        missing,
        ds.target_column().map(|t| t.to_vec()),
    )
}

/// Per-date standardization of continuous columns with the population
/// standard deviation over present values. Zero-variance dates map to 0.
pub fn zscore_by_date(ds: &PanelDataset) -> PanelDataset {
    let p = ds.n_features();
    let mut values = ds.raw_values().to_vec();
    let missing = ds.raw_missing();
    for (_, range) in ds.date_groups() {
        for (j, f) in ds.features().iter().enumerate() {
            if f.kind != FeatureKind::Continuous {
                continue;
            }
            let present: Vec<usize> = range.clone().filter(|&r| !missing[r * p + j]).collect();
            if present.is_empty() {
                continue;
            }
            let n = present.len() as f64;
            let mean = present.iter().map(|&r| values[r * p + j]).sum::<f64>() / n;
            let var = present
                .iter()
                .map(|&r| (values[r * p + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            let scale = present
                .iter()
                .map(|&r| values[r * p + j].abs())
                .fold(0.0_f64, f64::max);
            // Rounding noise on a constant column counts as zero variance.
            let degenerate = !(std > 1e-13 * scale);
            for &r in &present {
                let v = &mut values[r * p + j];
                *v = if degenerate { 0.0 } else { (*v - mean) / std };
            }
        }
    }
    PanelDataset::from_parts(
        ds.features().to_vec(),
        ds.keys().to_vec(),
        values,
        missing.to_vec(),
        ds.target_column().map(|t| t.to_vec()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputeDateStats {
    pub month: MonthStamp,
    pub imputed_cells: usize,
    /// Columns with no present value on this date.
    pub empty_columns: usize,
}

pub fn impute(ds: &PanelDataset, policy: &ImputePolicy) -> PanelDataset {
    impute_audited(ds, policy).0
}

/// Fills missing cells from same-date statistics. A column with no present
/// value on a date gets 0 (numeric) or the most common value over prior
/// dates (binary/categorical).
pub fn impute_audited(ds: &PanelDataset, _policy: &ImputePolicy) -> (PanelDataset, Vec<ImputeDateStats>) {
    let p = ds.n_features();
    let mut values = ds.raw_values().to_vec();
    let missing = ds.raw_missing();
    let mut history: Vec<BTreeMap<i64, usize>> = vec![BTreeMap::new(); p];
    let mut audit = Vec::new();
    for (month, range) in ds.date_groups() {
        let mut stats = ImputeDateStats {
            month,
            imputed_cells: 0,
            empty_columns: 0,
        };
        for (j, f) in ds.features().iter().enumerate() {
            let mut present: Vec<f64> = range
                .clone()
                .filter(|&r| !missing[r * p + j])
                .map(|r| values[r * p + j])
                .collect();
            let holes: Vec<usize> = range.clone().filter(|&r| missing[r * p + j]).collect();
            let fill = if present.is_empty() {
                stats.empty_columns += 1;
                match f.kind {
                    FeatureKind::Continuous => 0.0,
                    _ => history[j]
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(v, _)| *v as f64)
                        .unwrap_or(0.0),
                }
            } else {
                match f.kind {
                    FeatureKind::Continuous => present.iter().sum::<f64>() / present.len() as f64,
                    _ => lower_median(&mut present),
                }
            };
            if f.kind != FeatureKind::Continuous {
                for v in &present {
                    *history[j].entry(v.round() as i64).or_default() += 1;
                }
            }
            for r in holes {
                values[r * p + j] = fill;
                stats.imputed_cells += 1;
            }
        }
        if stats.empty_columns > 0 {
            log::info!("{month}: {} columns fully missing", stats.empty_columns);
        }
        audit.push(stats);
    }
    let ds = PanelDataset::from_parts(
        ds.features().to_vec(),
        ds.keys().to_vec(),
        values,
        vec![false; missing.len()],
        ds.target_column().map(|t| t.to_vec()),
    );
    (ds, audit)
}

/// Median; even counts take the lower middle value.
fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

/// Replaces each categorical column by `cardinality` indicator columns named
/// `name=k`. Codes outside `0..cardinality` (unseen categories) give an
/// all-zero block; a missing code gives a missing block.
pub fn encode_categoricals(ds: &PanelDataset) -> PanelDataset {
    let p = ds.n_features();
    let mut features = Vec::new();
    // (source column, Some(level) for indicators)
    let mut plan: Vec<(usize, Option<u32>)> = Vec::new();
    for (j, f) in ds.features().iter().enumerate() {
        match f.kind {
            FeatureKind::Categorical { cardinality } => {
                for k in 0..cardinality {
                    features.push(FeatureSpec {
                        name: format!("{}={k}", f.name),
                        kind: FeatureKind::Binary,
                        lag_months: f.lag_months,
                        groups: f.groups.clone(),
                        block: Some(f.name.clone()),
                    });
                    plan.push((j, Some(k)));
                }
            }
            _ => {
                features.push(f.clone());
                plan.push((j, None));
            }
        }
    }
    if plan.len() == p && plan.iter().all(|(_, k)| k.is_none()) {
        return ds.clone();
    }
    let mut values = Vec::with_capacity(ds.n_rows() * plan.len());
    let mut missing = Vec::with_capacity(ds.n_rows() * plan.len());
    for r in 0..ds.n_rows() {
        for &(j, level) in &plan {
            match (ds.value(r, j), level) {
                (None, _) => {
                    values.push(f64::NAN);
                    missing.push(true);
                }
                (Some(v), None) => {
                    values.push(v);
                    missing.push(false);
                }
                (Some(v), Some(k)) => {
                    values.push(if v.round() == k as f64 { 1.0 } else { 0.0 });
                    missing.push(false);
                }
            }
        }
    }
    PanelDataset::from_parts(
        features,
        ds.keys().to_vec(),
        values,
        missing,
        ds.target_column().map(|t| t.to_vec()),
    )
}

/// Steps of the preprocessing chain, in their only admissible order.
#[derive(Debug, Clone)]
pub enum PrepStep {
    Filter {
        policy: FilterPolicy,
        size_feature: String,
    },
    JoinTargets(Vec<DrawdownTarget>),
    Lag,
    ZScore,
    Impute(ImputePolicy),
    Encode,
}

impl PrepStep {
    fn rank(&self) -> usize {
        match self {
            PrepStep::Filter { .. } => 0,
            PrepStep::JoinTargets(_) => 1,
            PrepStep::Lag => 2,
            PrepStep::ZScore => 3,
            PrepStep::Impute(_) => 4,
            PrepStep::Encode => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PrepStep::Filter { .. } => "filters",
            PrepStep::JoinTargets(_) => "target join",
            PrepStep::Lag => "lags",
            PrepStep::ZScore => "z-score",
            PrepStep::Impute(_) => "impute",
            PrepStep::Encode => "encode",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PrepAudit {
    pub filter: Option<FilterStats>,
    pub targets: Option<TargetJoinStats>,
    pub imputation: Vec<ImputeDateStats>,
    pub steps: Vec<String>,
}

impl PrepAudit {
    /// Per-date imputation counts as CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "imputed_cells", "empty_columns"])?;
        for s in &self.imputation {
            w.write_record([
                s.month.to_string(),
                s.imputed_cells.to_string(),
                s.empty_columns.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// An ordered preprocessing chain. Steps may be omitted but never reordered
/// or repeated: filters, target join, lags, z-score, impute, encode.
#[derive(Debug, Clone)]
pub struct PrepPipeline {
    steps: Vec<PrepStep>,
}

impl PrepPipeline {
    pub fn new(steps: Vec<PrepStep>) -> Result<Self> {
        for w in steps.windows(2) {
            if w[0].rank() >= w[1].rank() {
                return Err(Error::Config(format!(
                    "preprocessing step `{}` cannot follow `{}`",
                    w[1].name(),
                    w[0].name()
                )));
            }
        }
        Ok(PrepPipeline { steps })
    }

    pub fn run(&self, ds: &PanelDataset) -> Result<(PanelDataset, PrepAudit)> {
        let mut audit = PrepAudit::default();
        let mut cur = ds.clone();
        for step in &self.steps {
            audit.steps.push(step.name().to_string());
            cur = match step {
                PrepStep::Filter {
                    policy,
                    size_feature,
                } => {
                    let (d, s) = apply_filters_audited(&cur, policy, size_feature)
                        .map_err(|e| e.in_stage("filters"))?;
                    audit.filter = Some(s);
                    d
                }
                PrepStep::JoinTargets(targets) => {
                    let (d, s) = attach_targets(&cur, targets).map_err(|e| e.in_stage("target join"))?;
                    audit.targets = Some(s);
                    d
                }
                PrepStep::Lag => apply_lags(&cur),
                PrepStep::ZScore => zscore_by_date(&cur),
                PrepStep::Impute(policy) => {
                    let (d, s) = impute_audited(&cur, policy);
                    audit.imputation = s;
                    d
                }
                PrepStep::Encode => encode_categoricals(&cur),
            };
        }
        Ok((cur, audit))
    }
}

/// Month each column of row `key` was sourced from after lagging.
pub fn feature_source_months(features: &[FeatureSpec], key: &RowKey) -> Vec<MonthStamp> {
    features
        .iter()
        .map(|f| key.month.add_months(-(f.lag_months as i64)))
        .collect()
}

/// Counts per category code, used by tests and reports.
pub fn category_counts(ds: &PanelDataset, col: usize) -> HashMap<i64, usize> {
    let mut out = HashMap::new();
    for r in 0..ds.n_rows() {
        if let Some(v) = ds.value(r, col) {
            *out.entry(v.round() as i64).or_default() += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{FeatureGroup, PanelRow, SecurityId};
    use proptest::prelude::*;

    fn month(y: i32, m: u32) -> MonthStamp {
        MonthStamp::new(y, m).unwrap()
    }

    fn one_date(features: Vec<FeatureSpec>, cols: Vec<Vec<Option<f64>>>) -> PanelDataset {
        let n = cols[0].len();
        let rows = (0..n)
            .map(|i| PanelRow {
                security: SecurityId::new(format!("S{i:05}")).unwrap(),
                month: month(2010, 1),
                values: cols.iter().map(|c| c[i]).collect(),
                target: None,
            })
            .collect();
        PanelDataset::from_rows(features, rows, false).unwrap()
    }

    #[test]
    fn zscore_hand_example() {
        let ds = one_date(vec![FeatureSpec::continuous("a")], vec![vec![Some(1.0), Some(2.0), Some(3.0)]]);
        let z = zscore_by_date(&ds);
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (r, e) in expected.iter().enumerate() {
            assert!((z.value(r, 0).unwrap() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_column_and_passthrough() {
        let ds = one_date(
            vec![
                FeatureSpec::continuous("a"),
                FeatureSpec::continuous("b").with_kind(FeatureKind::Binary),
            ],
            vec![vec![Some(4.0); 3], vec![Some(1.0), Some(0.0), Some(1.0)]],
        );
        let z = zscore_by_date(&ds);
        assert!((0..3).all(|r| z.value(r, 0) == Some(0.0)));
        assert!((0..3).all(|r| z.value(r, 1) == ds.value(r, 1)));
    }

    #[test]
    fn impute_numeric_mean_after_zscore() {
        let col: Vec<Option<f64>> = (0..100)
            .map(|i| if i % 33 == 5 { None } else { Some((i as f64).sin() * 3.0 + 1.0) })
            .collect();
        assert_eq!(col.iter().filter(|c| c.is_none()).count(), 3);
        let ds = one_date(vec![FeatureSpec::continuous("a")], vec![col]);
        let z = zscore_by_date(&ds);
        let present_mean: f64 =
            (0..100).filter_map(|r| z.value(r, 0)).sum::<f64>() / 97.0;
        let imp = impute(&z, &ImputePolicy);
        assert_eq!(imp.missing_count(), 0);
        for r in [5usize, 38, 71] {
            assert!((imp.value(r, 0).unwrap() - present_mean).abs() < 1e-15);
            assert!(imp.value(r, 0).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn impute_binary_median_and_ties() {
        let f = FeatureSpec::continuous("b").with_kind(FeatureKind::Binary);
        let ds = one_date(vec![f.clone()], vec![vec![Some(0.0), Some(0.0), Some(1.0), None]]);
        assert_eq!(impute(&ds, &ImputePolicy).value(3, 0), Some(0.0));
        let tie = one_date(vec![f], vec![vec![Some(0.0), Some(1.0), None]]);
        assert_eq!(impute(&tie, &ImputePolicy).value(2, 0), Some(0.0));
    }

    #[test]
    fn impute_without_missing_is_identity() {
        let ds = one_date(vec![FeatureSpec::continuous("a")], vec![vec![Some(1.0), Some(2.0)]]);
        assert_eq!(impute(&ds, &ImputePolicy), ds);
    }

    #[test]
    fn fully_missing_column_uses_fallbacks() {
        let cat = FeatureSpec::continuous("c").with_kind(FeatureKind::Categorical { cardinality: 3 });
        let rows: Vec<PanelRow> = (0..6)
            .map(|i| PanelRow {
                security: SecurityId::new(format!("S{}", i % 3)).unwrap(),
                month: month(2010, 1 + (i / 3) as u32),
                values: if i < 3 {
                    vec![Some(1.0), Some([2.0, 2.0, 1.0][i])]
                } else {
                    vec![None, None]
                },
                target: None,
            })
            .collect();
        let ds = PanelDataset::from_rows(vec![FeatureSpec::continuous("a"), cat], rows, false).unwrap();
        let (imp, audit) = impute_audited(&ds, &ImputePolicy);
        assert_eq!(imp.value(3, 0), Some(0.0));
        assert_eq!(imp.value(3, 1), Some(2.0));
        assert_eq!(audit[1].empty_columns, 2);
    }

    #[test]
    fn encode_counts() {
        let ds = one_date(
            vec![
                FeatureSpec::continuous("sector").with_kind(FeatureKind::Categorical { cardinality: 9 }),
                FeatureSpec::continuous("b").with_kind(FeatureKind::Binary),
            ],
            vec![vec![Some(3.0), Some(8.0)], vec![Some(1.0), Some(0.0)]],
        );
        let e = encode_categoricals(&ds);
        assert_eq!(e.n_features(), 10);
        assert_eq!(e.value(0, 3), Some(1.0));
        assert_eq!((0..9).map(|j| e.value(0, j).unwrap()).sum::<f64>(), 1.0);
        assert_eq!(e.features()[9].name, "b");

        let two = one_date(
            vec![
                FeatureSpec::continuous("x").with_kind(FeatureKind::Categorical { cardinality: 3 }),
                FeatureSpec::continuous("y").with_kind(FeatureKind::Categorical { cardinality: 4 }),
            ],
            vec![vec![Some(0.0)], vec![Some(7.0)]],
        );
        let e2 = encode_categoricals(&two);
        assert_eq!(e2.n_features(), 7);
        // unseen category -> all-zero block
        assert!((3..7).all(|j| e2.value(0, j) == Some(0.0)));
    }

    #[test]
    fn lags_shift_values() {
        let features = vec![
            FeatureSpec::continuous("esg").with_lag(2).with_groups([FeatureGroup::EsgSingle]),
            FeatureSpec::continuous("x"),
        ];
        let rows: Vec<PanelRow> = (0..4)
            .map(|i| PanelRow {
                security: SecurityId::new("A").unwrap(),
                month: month(2014, 3 + i),
                values: vec![Some(i as f64), Some(10.0 + i as f64)],
                target: None,
            })
            .collect();
        let ds = PanelDataset::from_rows(features, rows, false).unwrap();
        let lagged = apply_lags(&ds);
        // raw value dated 2014-04 (i = 1) shows up at 2014-06
        assert_eq!(lagged.value(3, 0), Some(1.0));
        assert!(lagged.is_missing(0, 0) && lagged.is_missing(1, 0));
        assert_eq!(lagged.value(0, 1), Some(10.0));
    }

    #[test]
    fn filters_drop_smallest_with_ceiling() {
        let n = 10_000;
        let sizes: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64 + 1.0)).collect();
        let ds = one_date(vec![FeatureSpec::continuous("mve")], vec![sizes]);
        let policy = FilterPolicy {
            min_consecutive_months: 1,
            drop_smallest_fraction: 0.0005,
            require_positive: vec![],
        };
        let (out, stats) = apply_filters_audited(&ds, &policy, "mve").unwrap();
        assert_eq!(stats.dropped_small, 5);
        assert_eq!(out.n_rows(), n - 5);
        assert!((0..out.n_rows()).all(|r| out.value(r, 0).unwrap() > 5.0));
    }

    #[test]
    fn filters_identity_and_history() {
        let rows: Vec<PanelRow> = (0..23)
            .map(|i| {
                let (sec, m) = if i < 12 { ("A", i) } else { ("B", i - 12) };
                PanelRow {
                    security: SecurityId::new(sec).unwrap(),
                    month: month(2000, 1).add_months(m as i64),
                    values: vec![Some(1.0 + i as f64), Some(0.5)],
                    target: None,
                }
            })
            .collect();
        let features = vec![FeatureSpec::continuous("mve"), FeatureSpec::continuous("bm")];
        let ds = PanelDataset::from_rows(features, rows, false).unwrap();
        let relaxed = FilterPolicy {
            min_consecutive_months: 0,
            drop_smallest_fraction: 0.0,
            require_positive: vec!["bm".into()],
        };
        assert_eq!(apply_filters(&ds, &relaxed, "mve").unwrap(), ds);
        let strict = FilterPolicy {
            min_consecutive_months: 12,
            ..relaxed
        };
        let out = apply_filters(&ds, &strict, "mve").unwrap();
        assert_eq!(out.securities(), vec![SecurityId::new("A").unwrap()]);
    }

    #[test]
    fn pipeline_rejects_bad_order() {
        assert!(PrepPipeline::new(vec![PrepStep::ZScore, PrepStep::Lag]).is_err());
        assert!(PrepPipeline::new(vec![PrepStep::Impute(ImputePolicy), PrepStep::ZScore]).is_err());
        assert!(PrepPipeline::new(vec![PrepStep::Lag, PrepStep::Lag]).is_err());
        assert!(PrepPipeline::new(vec![PrepStep::Lag, PrepStep::ZScore, PrepStep::Impute(ImputePolicy), PrepStep::Encode]).is_ok());
    }

    fn panel_strategy() -> impl Strategy<Value = PanelDataset> {
        (2usize..6, 2usize..25).prop_flat_map(|(months, secs)| {
            prop::collection::vec(prop::option::weighted(0.85, -50.0f64..50.0), months * secs).prop_map(
                move |cells| {
                    let rows = (0..months * secs)
                        .map(|i| PanelRow {
                            security: SecurityId::new(format!("S{:03}", i % secs)).unwrap(),
                            month: month(2001, 1).add_months((i / secs) as i64),
                            values: vec![cells[i], Some(1.0 + (i % 7) as f64)],
                            target: None,
                        })
                        .collect();
                    PanelDataset::from_rows(
                        vec![FeatureSpec::continuous("x"), FeatureSpec::continuous("mve")],
                        rows,
                        false,
                    )
                    .unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn zscore_moments_and_ranks(ds in panel_strategy()) {
            let z = zscore_by_date(&ds);
            for (_, range) in ds.date_groups() {
                let rows: Vec<usize> = range.filter(|&r| !ds.is_missing(r, 0)).collect();
                let vals: Vec<f64> = rows.iter().map(|&r| z.value(r, 0).unwrap()).collect();
                let raw: Vec<f64> = rows.iter().map(|&r| ds.value(r, 0).unwrap()).collect();
                let mut distinct = raw.clone();
                distinct.sort_by(|a, b| a.total_cmp(b));
                distinct.dedup();
                if distinct.len() >= 2 {
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!(mean.abs() < 1e-10);
                    prop_assert!((std - 1.0).abs() < 1e-10);
                }
                for a in 0..raw.len() {
                    for b in 0..raw.len() {
                        if raw[a] < raw[b] {
                            prop_assert!(vals[a] < vals[b]);
                        }
                    }
                }
            }
            let imp = impute(&z, &ImputePolicy);
            for r in 0..ds.n_rows() {
                if ds.is_missing(r, 0) {
                    prop_assert!(imp.value(r, 0).unwrap().abs() < 1e-10);
                }
            }
        }

        #[test]
        fn relaxing_filters_never_removes_more(ds in panel_strategy(), frac in 0.0f64..0.5, min in 0u32..5) {
            let strict = FilterPolicy { min_consecutive_months: min + 1, drop_smallest_fraction: frac, require_positive: vec![] };
            let loose = FilterPolicy { min_consecutive_months: min, drop_smallest_fraction: frac * 0.5, require_positive: vec![] };
            if let Ok(s) = apply_filters(&ds, &strict, "mve") {
                let l = apply_filters(&ds, &loose, "mve").unwrap();
                let lk: std::collections::HashSet<_> = l.keys().iter().collect();
                prop_assert!(s.keys().iter().all(|k| lk.contains(k)));
            }
        }
    }
}
