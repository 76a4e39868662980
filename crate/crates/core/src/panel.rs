//! Pooled (security, month) panel: identifiers, the monthly time axis,
//! feature metadata and the aligned dataset container.
//!
//! Rows are kept in a fixed order (month-major, then security id ascending)
//! so every downstream fit sees the same design matrix for the same data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque security identifier (PERMNO-like token).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SecurityId(String);

impl SecurityId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::InvalidInput("security id must be non-empty".into()));
        }
        Ok(SecurityId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SecurityId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        SecurityId::new(s)
    }
}

impl From<SecurityId> for String {
    fn from(id: SecurityId) -> String {
        id.0
    }
}

impl fmt::Display for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Calendar month. Ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthStamp {
    year: i32,
    month: u32,
}

impl MonthStamp {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidInput(format!("month {month} outside 1..=12")));
        }
        Ok(MonthStamp { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn from_date(date: NaiveDate) -> Self {
        MonthStamp {
            year: date.year(),
            month: date.month(),
        }
    }

    /// Months since year 0, used for arithmetic.
    fn ordinal(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        MonthStamp {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn add_months(&self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(&self, other: MonthStamp) -> i64 {
        other.ordinal() - self.ordinal()
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn last_day(&self) -> NaiveDate {
        self.add_months(1).first_day().pred_opt().expect("date in range")
    }

    /// Inclusive iterator over consecutive months.
    pub fn range_inclusive(from: MonthStamp, to: MonthStamp) -> impl Iterator<Item = MonthStamp> {
        (from.ordinal()..=to.ordinal()).map(MonthStamp::from_ordinal)
    }
}

impl fmt::Display for MonthStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthStamp {
    type Err = Error;

    /// Accepts `YYYY-MM` or `YYYY-MM-DD` (the day is ignored).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(format!("cannot parse month `{s}`"));
        let mut parts = s.split('-');
        let year: i32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let month: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if let Some(day) = parts.next() {
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad())?;
            let _ = day;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        MonthStamp::new(year, month)
    }
}

impl TryFrom<String> for MonthStamp {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MonthStamp> for String {
    fn from(m: MonthStamp) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Categorical { cardinality: u32 },
}

/// Column group tags used to assemble the feature-set cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "trimmed_FC")]
    TrimmedFc,
    #[serde(rename = "refined_ESG")]
    RefinedEsg,
    #[serde(rename = "ESG_aggregate")]
    EsgAggregate,
    #[serde(rename = "ESG_single")]
    EsgSingle,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Fc,
        FeatureGroup::TrimmedFc,
        FeatureGroup::RefinedEsg,
        FeatureGroup::EsgAggregate,
        FeatureGroup::EsgSingle,
    ];

    pub fn is_esg(&self) -> bool {
        matches!(
            self,
            FeatureGroup::RefinedEsg | FeatureGroup::EsgAggregate | FeatureGroup::EsgSingle
        )
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureGroup::Fc => "FC",
            FeatureGroup::TrimmedFc => "trimmed_FC",
            FeatureGroup::RefinedEsg => "refined_ESG",
            FeatureGroup::EsgAggregate => "ESG_aggregate",
            FeatureGroup::EsgSingle => "ESG_single",
        };
        f.write_str(s)
    }
}

/// Column metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub lag_months: u32,
    #[serde(default)]
    pub groups: BTreeSet<FeatureGroup>,
    /// Source categorical column for one-hot indicator columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            lag_months: 0,
            groups: [FeatureGroup::Fc].into_iter().collect(),
            block: None,
        }
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_lag(mut self, lag_months: u32) -> Self {
        self.lag_months = lag_months;
        self
    }

    pub fn with_groups(mut self, groups: impl IntoIterator<Item = FeatureGroup>) -> Self {
        self.groups = groups.into_iter().collect();
        self
    }

    /// Checks the standard lag policy: lags in {1, 2, 6} and
    /// two-month lags on every ESG column.
    pub fn has_standard_lag(&self) -> bool {
        let lag_ok = matches!(self.lag_months, 1 | 2 | 6);
        let esg_ok = !self.groups.iter().any(|g| g.is_esg()) || self.lag_months == 2;
        lag_ok && esg_ok
    }
}

pub(crate) fn validate_features(features: &[FeatureSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in features {
        if !seen.insert(f.name.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate feature name `{}`", f.name)));
        }
        if let FeatureKind::Categorical { cardinality } = f.kind {
            if cardinality < 2 {
                return Err(Error::InvalidInput(format!(
                    "categorical `{}` needs cardinality >= 2",
                    f.name
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub month: MonthStamp,
    pub security: SecurityId,
}

/// One observation used to construct a [`PanelDataset`].
#[derive(Debug, Clone)]
pub struct PanelRow {
    pub security: SecurityId,
    pub month: MonthStamp,
    pub values: Vec<Option<f64>>,
    pub target: Option<f64>,
}

/// Aligned long-format panel. Missing cells hold `NaN` and are flagged in
/// the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    features: Vec<FeatureSpec>,
    keys: Vec<RowKey>,
    values: Vec<f64>,
    missing: Vec<bool>,
    target: Option<Vec<Option<f64>>>,
}

impl PanelDataset {
    /// Builds a dataset; rows are sorted month-major then by security.
    /// `with_target` controls whether a target column exists at all.
    pub fn from_rows(
        features: Vec<FeatureSpec>,
        mut rows: Vec<PanelRow>,
        with_target: bool,
    ) -> Result<Self> {
        validate_features(&features)?;
        let p = features.len();
        rows.sort_by(|a, b| (a.month, &a.security).cmp(&(b.month, &b.security)));
        let mut keys = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut missing = Vec::with_capacity(rows.len() * p);
        let mut target = Vec::with_capacity(rows.len());
        for (r, row) in rows.into_iter().enumerate() {
            if row.values.len() != p {
                return Err(Error::ShapeMismatch {
                    expected: p,
                    found: row.values.len(),
                });
            }
            let key = RowKey {
                month: row.month,
                security: row.security,
            };
            if keys.last() == Some(&key) {
                return Err(Error::InvalidInput(format!(
                    "duplicate row ({}, {})",
                    key.security, key.month
                )));
            }
            for (j, v) in row.values.into_iter().enumerate() {
                match v {
                    Some(x) if x.is_finite() => {
                        values.push(x);
                        missing.push(false);
                    }
                    Some(_) => return Err(Error::NonFinite { row: r, col: j }),
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
            if let Some(t) = row.target {
                check_target(t)?;
            }
            target.push(row.target);
            keys.push(key);
        }
        Ok(PanelDataset {
            features,
            keys,
            values,
            missing,
            target: with_target.then_some(target),
        })
    }

    pub(crate) fn from_parts(
        features: Vec<FeatureSpec>,
        keys: Vec<RowKey>,
        values: Vec<f64>,
        missing: Vec<bool>,
        target: Option<Vec<Option<f64>>>,
    ) -> Self {
        debug_assert_eq!(values.len(), keys.len() * features.len());
        debug_assert_eq!(missing.len(), values.len());
        PanelDataset {
            features,
            keys,
            values,
            missing,
            target,
        }
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.features.len() + col;
        (!self.missing[i]).then(|| self.values[i])
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.features.len() + col]
    }

    pub(crate) fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn raw_missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn has_target(&self) -> bool {
        self.target.is_some()
    }

    pub fn target(&self, row: usize) -> Option<f64> {
        self.target.as_ref().and_then(|t| t[row])
    }

    pub(crate) fn target_column(&self) -> Option<&[Option<f64>]> {
        self.target.as_deref()
    }

    /// Distinct securities, ascending.
    pub fn securities(&self) -> Vec<SecurityId> {
        let set: BTreeSet<&SecurityId> = self.keys.iter().map(|k| &k.security).collect();
        set.into_iter().cloned().collect()
    }

    /// Distinct months, ascending.
    pub fn months(&self) -> Vec<MonthStamp> {
        self.date_groups().into_iter().map(|(m, _)| m).collect()
    }

    /// Contiguous row ranges per month (rows are month-major).
    pub fn date_groups(&self) -> Vec<(MonthStamp, Range<usize>)> {
        let mut out: Vec<(MonthStamp, Range<usize>)> = Vec::new();
        for (r, key) in self.keys.iter().enumerate() {
            match out.last_mut() {
                Some((m, range)) if *m == key.month => range.end = r + 1,
                _ => out.push((key.month, r..r + 1)),
            }
        }
        out
    }

    /// Row lookup by (security, month).
    pub fn row_lookup(&self) -> HashMap<(SecurityId, MonthStamp), usize> {
        self.keys
            .iter()
            .enumerate()
            .map(|(r, k)| ((k.security.clone(), k.month), r))
            .collect()
    }

    /// Keeps the rows for which `keep` is true, preserving order.
    pub(crate) fn filter_rows(&self, keep: &[bool]) -> PanelDataset {
        let p = self.features.len();
        let mut keys = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        let mut target = self.target.as_ref().map(|_| Vec::new());
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            keys.push(self.keys[r].clone());
            values.extend_from_slice(&self.values[r * p..(r + 1) * p]);
            missing.extend_from_slice(&self.missing[r * p..(r + 1) * p]);
            if let (Some(t), Some(src)) = (target.as_mut(), self.target.as_ref()) {
                t.push(src[r]);
            }
        }
        PanelDataset::from_parts(self.features.clone(), keys, values, missing, target)
    }

    /// Replaces the target column; every present value must lie in [0, 1).
    pub fn with_target(&self, target: Vec<Option<f64>>) -> Result<PanelDataset> {
        if target.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!(
                "target has {} entries for {} rows",
                target.len(),
                self.n_rows()
            )));
        }
        for t in target.iter().flatten() {
            check_target(*t)?;
        }
        let mut out = self.clone();
        out.target = Some(target);
        Ok(out)
    }

    /// Restricts to the columns belonging to any of `groups`, preserving order.
    pub fn select_columns(&self, groups: &BTreeSet<FeatureGroup>) -> Result<PanelDataset> {
        let cols: Vec<usize> = self
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.groups.iter().any(|g| groups.contains(g)))
            .map(|(j, _)| j)
            .collect();
        if cols.is_empty() {
            let names: Vec<String> = groups.iter().map(|g| g.to_string()).collect();
            return Err(Error::EmptySelection {
                groups: names.join(", "),
            });
        }
        Ok(self.select_indices(&cols))
    }

    /// Restricts to the named columns (and any one-hot indicators derived
    /// from them), preserving dataset order.
    pub fn select_named(&self, names: &[&str]) -> Result<PanelDataset> {
        let cols: Vec<usize> = self
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                names.contains(&f.name.as_str())
                    || f.block.as_deref().is_some_and(|b| names.contains(&b))
            })
            .map(|(j, _)| j)
            .collect();
        if cols.is_empty() {
            return Err(Error::EmptySelection {
                groups: names.join(", "),
            });
        }
        Ok(self.select_indices(&cols))
    }

    pub(crate) fn select_indices(&self, cols: &[usize]) -> PanelDataset {
        let p = self.features.len();
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * cols.len());
        let mut missing = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for &j in cols {
                values.push(self.values[r * p + j]);
                missing.push(self.missing[r * p + j]);
            }
        }
        PanelDataset::from_parts(
            cols.iter().map(|&j| self.features[j].clone()).collect(),
            self.keys.clone(),
            values,
            missing,
            self.target.clone(),
        )
    }

    /// Rows with `from <= month <= to`.
    pub fn slice_months(&self, from: MonthStamp, to: MonthStamp) -> Result<PanelDataset> {
        if from > to {
            return Err(Error::InvalidInput(format!("slice start {from} after end {to}")));
        }
        let keep: Vec<bool> = self
            .keys
            .iter()
            .map(|k| k.month >= from && k.month <= to)
            .collect();
        if !keep.iter().any(|k| *k) {
            return Err(Error::EmptySlice {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        Ok(self.filter_rows(&keep))
    }

    /// Stacks rows with a present target into a dense design matrix.
    /// Categorical columns still present are expanded to one-hot blocks.
    pub fn stack(&self) -> Design {
        let ds = if self
            .features
            .iter()
            .any(|f| matches!(f.kind, FeatureKind::Categorical { .. }))
        {
            crate::prep::encode_categoricals(self)
        } else {
            self.clone()
        };
        let rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| ds.target(r).is_some()).collect();
        let p = ds.n_features();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| ds.values[rows[i] * p + j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.target(r).unwrap()));
        Design {
            x,
            y,
            index: rows.iter().map(|&r| ds.keys[r].clone()).collect(),
            source_rows: rows.clone(),
            columns: ds.features.iter().map(|f| f.name.clone()).collect(),
            blocks: feature_blocks(&ds.features),
            excluded: ds.n_rows() - rows.len(),
        }
    }
}

fn check_target(t: f64) -> Result<()> {
    if !(t.is_finite() && (0.0..1.0).contains(&t)) {
        return Err(Error::InvalidInput(format!("target {t} outside [0, 1)")));
    }
    Ok(())
}

/// A named group of design columns permuted together (one-hot blocks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub columns: Vec<usize>,
}

pub fn feature_blocks(features: &[FeatureSpec]) -> Vec<FeatureBlock> {
    let mut blocks: Vec<FeatureBlock> = Vec::new();
    for (j, f) in features.iter().enumerate() {
        let name = f.block.clone().unwrap_or_else(|| f.name.clone());
        match blocks.iter_mut().find(|b| b.name == name) {
            Some(b) => b.columns.push(j),
            None => blocks.push(FeatureBlock {
                name,
                columns: vec![j],
            }),
        }
    }
    blocks
}

/// Stacked design matrix with row provenance.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub index: Vec<RowKey>,
    /// Row positions in the source (encoded) dataset, for inverse lookup.
    pub source_rows: Vec<usize>,
    pub columns: Vec<String>,
    pub blocks: Vec<FeatureBlock>,
    /// Rows dropped for lacking a target.
    pub excluded: usize,
}

impl Design {
    pub fn months(&self) -> Vec<MonthStamp> {
        self.index.iter().map(|k| k.month).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Subset of rows, keeping provenance.
    pub fn select_rows(&self, rows: &[usize]) -> Design {
        Design {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            index: rows.iter().map(|&r| self.index[r].clone()).collect(),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
            columns: self.columns.clone(),
            blocks: self.blocks.clone(),
            excluded: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// CSV interface: security_id,date,feature_1..feature_P[,target]

const TARGET_COLUMN: &str = "target";

pub fn read_panel_csv(
    reader: impl Read,
    feature_specs: Option<&[FeatureSpec]>,
) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "security_id" || &headers[1] != "date" {
        return Err(Error::InvalidInput(
            "panel CSV header must start with security_id,date".into(),
        ));
    }
    let mut names: Vec<&str> = headers.iter().skip(2).collect();
    let has_target = names.last() == Some(&TARGET_COLUMN);
    if has_target {
        names.pop();
    }
    let specs: Vec<FeatureSpec> = match feature_specs {
        Some(specs) => {
            let by_name: BTreeMap<&str, &FeatureSpec> =
                specs.iter().map(|s| (s.name.as_str(), s)).collect();
            names
                .iter()
                .map(|n| {
                    by_name.get(n).map(|s| (*s).clone()).ok_or_else(|| {
                        Error::InvalidInput(format!("column `{n}` missing from feature metadata"))
                    })
                })
                .collect::<Result<_>>()?
        }
        None => names.iter().map(|n| FeatureSpec::continuous(*n)).collect(),
    };
    let p = specs.len();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str, what: &str| -> Result<Option<f64>> {
            let s = s.trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| {
                Error::InvalidInput(format!("line {}: cannot parse {what} `{s}`", line + 2))
            })
        };
        let security = SecurityId::new(&rec[0])?;
        let month: MonthStamp = rec[1].parse()?;
        let values = (0..p)
            .map(|j| parse(rec.get(j + 2).unwrap_or(""), &specs[j].name))
            .collect::<Result<Vec<_>>>()?;
        let target = if has_target {
            parse(rec.get(p + 2).unwrap_or(""), TARGET_COLUMN)?
        } else {
            None
        };
        rows.push(PanelRow {
            security,
            month,
            values,
            target,
        });
    }
    PanelDataset::from_rows(specs, rows, has_target)
}

pub fn write_panel_csv(ds: &PanelDataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["security_id".to_string(), "date".to_string()];
    header.extend(ds.features.iter().map(|f| f.name.clone()));
    if ds.has_target() {
        header.push(TARGET_COLUMN.to_string());
    }
    w.write_record(&header)?;
    for (r, key) in ds.keys.iter().enumerate() {
        let mut rec = vec![
            key.security.to_string(),
            key.month.last_day().format("%Y-%m-%d").to_string(),
        ];
        for j in 0..ds.n_features() {
            rec.push(ds.value(r, j).map(|v| v.to_string()).unwrap_or_default());
        }
        if ds.has_target() {
            rec.push(ds.target(r).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_panel(path: &Path, feature_specs: Option<&[FeatureSpec]>) -> Result<PanelDataset> {
    read_panel_csv(std::fs::File::open(path)?, feature_specs)
}

pub fn load_feature_specs(path: &Path) -> Result<Vec<FeatureSpec>> {
    let specs: Vec<FeatureSpec> = serde_json::from_reader(std::fs::File::open(path)?)?;
    validate_features(&specs)?;
    Ok(specs)
}
