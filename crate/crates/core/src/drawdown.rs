//! Forward maximum drawdown targets.
//!
//! The drawdown of a window is the largest fractional decline from a running
//! peak to any later trough, reported as a positive fraction in `[0, 1)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{MonthStamp, PanelDataset, SecurityId};

/// Ordered positive price observations for one security.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    security: SecurityId,
    timestamps: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(security: SecurityId, timestamps: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::InvalidInput(format!(
                "{security}: {} timestamps for {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "{security}: timestamps not strictly increasing at {}",
                timestamps[w + 1]
            )));
        }
        if let Some(i) = prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::NonPositivePrice {
                index: i,
                value: prices[i],
            });
        }
        Ok(PriceSeries {
            security,
            timestamps,
            prices,
        })
    }

    pub fn security(&self) -> &SecurityId {
        &self.security
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Prices with `after < timestamp <= until`.
    pub fn window(&self, after: NaiveDate, until: NaiveDate) -> &[f64] {
        let lo = self.timestamps.partition_point(|d| *d <= after);
        let hi = self.timestamps.partition_point(|d| *d <= until);
        &self.prices[lo..hi.max(lo)]
    }
}

/// Maximum drawdown of an ordered price sequence, single linear scan.
pub fn max_drawdown(prices: &[f64]) -> Result<f64> {
    if prices.len() < 2 {
        return Err(Error::TooFewPrices(prices.len()));
    }
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0_f64;
    for (i, &p) in prices.iter().enumerate() {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::NonPositivePrice { index: i, value: p });
        }
        if p > peak {
            peak = p;
        } else {
            let dd = (peak - p) / peak;
            if dd > worst {
                worst = dd;
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawdownTarget {
    pub security: SecurityId,
    pub month: MonthStamp,
    pub mdd: f64,
    /// Exclusive window start (last calendar day of the prediction month).
    pub window_start: NaiveDate,
    /// Inclusive window end.
    pub window_end: NaiveDate,
}

/// One target per (security, month) whose forward window of
/// `horizon_months` is fully covered by the series.
///
/// Window is `(last day of m, last day of m + horizon]`. A month qualifies
/// when the series starts on or before the end of `m`, has an observation
/// in the final month of the window and at least two prices inside it.
pub fn forward_mdd_panel(
    series: &BTreeMap<SecurityId, PriceSeries>,
    months: &[MonthStamp],
    horizon_months: u32,
) -> Result<Vec<DrawdownTarget>> {
    if horizon_months == 0 {
        return Err(Error::InvalidInput("horizon_months must be >= 1".into()));
    }
    let per_security: Vec<Vec<DrawdownTarget>> = series
        .par_iter()
        .map(|(id, s)| -> Result<Vec<DrawdownTarget>> {
            let mut out = Vec::new();
            let (Some(first), Some(last)) = (s.timestamps.first(), s.timestamps.last()) else {
                return Ok(out);
            };
            for &m in months {
                let end_month = m.add_months(horizon_months as i64);
                let start = m.last_day();
                let end = end_month.last_day();
                if *first > start || *last < end_month.first_day() {
                    continue;
                }
                let w = s.window(start, end);
                if w.len() < 2 {
                    continue;
                }
                out.push(DrawdownTarget {
                    security: id.clone(),
                    month: m,
                    mdd: max_drawdown(w)?,
                    window_start: start,
                    window_end: end,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_security.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TargetJoinStats {
    /// Panel securities with no price series at all.
    pub absent_securities: usize,
    /// Panel rows left without a target.
    pub rows_without_target: usize,
}

/// Attaches targets to the panel by (security, month).
pub fn attach_targets(
    ds: &PanelDataset,
    targets: &[DrawdownTarget],
) -> Result<(PanelDataset, TargetJoinStats)> {
    let lookup: BTreeMap<(&SecurityId, MonthStamp), f64> =
        targets.iter().map(|t| ((&t.security, t.month), t.mdd)).collect();
    let covered: std::collections::BTreeSet<&SecurityId> =
        targets.iter().map(|t| &t.security).collect();
    let column: Vec<Option<f64>> = ds
        .keys()
        .iter()
        .map(|k| lookup.get(&(&k.security, k.month)).copied())
        .collect();
    let stats = TargetJoinStats {
        absent_securities: ds
            .securities()
            .iter()
            .filter(|s| !covered.contains(s))
            .count(),
        rows_without_target: column.iter().filter(|t| t.is_none()).count(),
    };
    if stats.absent_securities > 0 {
        log::warn!(
            "{} panel securities have no price series; their rows get no target",
            stats.absent_securities
        );
    }
    Ok((ds.with_target(column)?, stats))
}

/// Reads `security_id,date,price`. Dates must strictly increase within each
/// security in file order.
pub fn read_prices_csv(reader: impl Read) -> Result<BTreeMap<SecurityId, PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["security_id", "date", "price"] {
        return Err(Error::InvalidInput(
            "price CSV header must be security_id,date,price".into(),
        ));
    }
    let mut raw: BTreeMap<SecurityId, (Vec<NaiveDate>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = SecurityId::new(&rec[0])?;
        let date = NaiveDate::parse_from_str(rec[1].trim(), "%Y-%m-%d").map_err(|_| {
            Error::InvalidInput(format!("line {}: bad date `{}`", line + 2, &rec[1]))
        })?;
        let price: f64 = rec[2].trim().parse().map_err(|_| {
            Error::InvalidInput(format!("line {}: bad price `{}`", line + 2, &rec[2]))
        })?;
        let entry = raw.entry(id.clone()).or_default();
        if entry.0.last().is_some_and(|d| *d >= date) {
            return Err(Error::InvalidInput(format!(
                "line {}: out-of-order date {date} for security {id}",
                line + 2
            )));
        }
        entry.0.push(date);
        entry.1.push(price);
    }
    raw.into_iter()
        .map(|(id, (ts, ps))| Ok((id.clone(), PriceSeries::new(id, ts, ps)?)))
        .collect()
}

pub fn write_prices_csv(
    series: &BTreeMap<SecurityId, PriceSeries>,
    writer: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["security_id", "date", "price"])?;
    for s in series.values() {
        for (d, p) in s.timestamps.iter().zip(&s.prices) {
            w.write_record([
                s.security.to_string(),
                d.format("%Y-%m-%d").to_string(),
                p.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_targets_csv(targets: &[DrawdownTarget], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["security_id", "date", "mdd", "window_start", "window_end"])?;
    for t in targets {
        w.write_record([
            t.security.to_string(),
            t.month.last_day().format("%Y-%m-%d").to_string(),
            t.mdd.to_string(),
            t.window_start.format("%Y-%m-%d").to_string(),
            t.window_end.format("%Y-%m-%d").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
