//! Seeded synthetic panel whose forward drawdowns are driven by planted
//! feature effects.
//!
//! Each security carries persistent AR(1) features. Every month its price
//! dips by a planted fraction and climbs back to the month's opening level,
//! so the drawdown over a forward window is governed by the largest monthly
//! risk inside it. Monthly log-risk is
//! `base + sum(coef * x) + sum(coef * x_a * x_b) + sector + esg`, clipped
//! at a small floor and multiplied inside the crisis window. Optional daily
//! noise adds an unpredictable random walk on top.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drawdown::{write_prices_csv, PriceSeries};
use crate::error::{Error, Result};
use crate::panel::{
    write_panel_csv, FeatureGroup, FeatureKind, FeatureSpec, MonthStamp, PanelDataset, PanelRow, SecurityId,
};

use super::split::MonthRange;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: String,
    pub b: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrisisWindow {
    pub from: MonthStamp,
    pub to: MonthStamp,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_multiplier() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_securities: usize,
    pub n_months: usize,
    /// Continuous characteristics, named by `feature_names` where given.
    pub n_features: usize,
    pub start: MonthStamp,
    pub feature_names: Vec<String>,
    /// Planted linear effects by feature name.
    pub coefficients: BTreeMap<String, f64>,
    pub interactions: Vec<Interaction>,
    pub base_risk: f64,
    /// AR(1) coefficient of every feature (unit stationary variance).
    pub persistence: f64,
    /// Features redrawn independently every month instead.
    pub iid_features: Vec<String>,
    /// Standard deviation of the daily log-price noise.
    pub noise: f64,
    pub missing_fraction: f64,
    pub crisis: Option<CrisisWindow>,
    /// Adds a 9-level sector code with evenly spread risk offsets.
    pub sector: bool,
    /// Adds ESG columns (one single score, three aggregates, refined scores)
    /// measuring a latent quality that lowers risk by `esg_effect`.
    pub esg: bool,
    pub esg_effect: f64,
    /// Features also tagged as the trimmed characteristic set.
    pub trimmed: usize,
    pub lag_months: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_securities: 50,
            n_months: 120,
            n_features: 10,
            start: MonthStamp::new(2000, 1).expect("valid month"),
            feature_names: default_names(10),
            coefficients: [("mve", -0.06), ("x3", 0.05), ("x4", 0.04), ("x5", 0.03)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            interactions: Vec::new(),
            base_risk: 0.15,
            persistence: 0.999,
            iid_features: Vec::new(),
            noise: 0.0,
            missing_fraction: 0.0,
            crisis: None,
            sector: false,
            esg: false,
            esg_effect: 0.02,
            trimmed: 6,
            lag_months: 1,
            seed: 0,
        }
    }
}

/// `mve` (size), `bm` (book-to-market, strictly positive), then `x3..xP`.
pub fn default_names(p: usize) -> Vec<String> {
    (1..=p)
        .map(|j| match j {
            1 => "mve".to_string(),
            2 => "bm".to_string(),
            _ => format!("x{j}"),
        })
        .collect()
}

const SECTORS: u32 = 9;
const RISK_FLOOR: f64 = 0.005;
const REFINED_ESG: usize = 12;

pub struct SyntheticData {
    pub panel: PanelDataset,
    pub prices: BTreeMap<SecurityId, PriceSeries>,
    pub features: Vec<FeatureSpec>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_securities == 0 || self.n_months == 0 || self.n_features == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if self.noise < 0.0 || !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("noise must be >= 0 and missing_fraction in [0, 1)".into()));
        }
        if !(self.persistence > -1.0 && self.persistence < 1.0) {
            return Err(Error::Config("persistence must lie in (-1, 1)".into()));
        }
        let names = self.names();
        let known = |n: &str| names.iter().any(|m| m == n);
        for n in self.coefficients.keys() {
            if !known(n) {
                return Err(Error::Config(format!("coefficient for unknown feature `{n}`")));
            }
        }
        if let Some(n) = self.iid_features.iter().find(|n| !known(n)) {
            return Err(Error::Config(format!("iid feature `{n}` is unknown")));
        }
        for i in &self.interactions {
            if !known(&i.a) || !known(&i.b) {
                return Err(Error::Config(format!("interaction {}*{} names an unknown feature", i.a, i.b)));
            }
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        names.truncate(self.n_features);
        let defaults = default_names(self.n_features);
        names.extend(defaults.into_iter().skip(names.len()));
        names
    }

    pub fn end(&self) -> MonthStamp {
        self.start.add_months(self.n_months as i64 - 1)
    }

    pub fn months(&self) -> MonthRange {
        MonthRange {
            from: self.start,
            to: self.end(),
        }
    }

    /// Column metadata for the generated panel.
    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        let mut specs: Vec<FeatureSpec> = self
            .names()
            .into_iter()
            .enumerate()
            .map(|(j, n)| {
                let mut groups = vec![FeatureGroup::Fc];
                if j < self.trimmed {
                    groups.push(FeatureGroup::TrimmedFc);
                }
                FeatureSpec::continuous(n).with_lag(self.lag_months).with_groups(groups)
            })
            .collect();
        if self.sector {
            specs.push(
                FeatureSpec::continuous("sector")
                    .with_kind(FeatureKind::Categorical { cardinality: SECTORS })
                    .with_lag(self.lag_months)
                    .with_groups([FeatureGroup::Fc, FeatureGroup::TrimmedFc]),
            );
        }
        if self.esg {
            let esg = |name: String, g: FeatureGroup| FeatureSpec::continuous(name).with_lag(2).with_groups([g]);
            specs.push(esg("esg".into(), FeatureGroup::EsgSingle));
            for p in ["e", "s", "g"] {
                specs.push(esg(format!("esg_{p}"), FeatureGroup::EsgAggregate));
            }
            for k in 1..=REFINED_ESG {
                specs.push(esg(format!("esg_r{k}"), FeatureGroup::RefinedEsg));
            }
        }
        specs
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        let names = self.names();
        let specs = self.feature_specs();
        let p = names.len();
        let idx = |n: &str| names.iter().position(|m| m == n).expect("validated name");
        let coef: Vec<(usize, f64)> = self.coefficients.iter().map(|(k, v)| (idx(k), *v)).collect();
        let inter: Vec<(usize, usize, f64)> = self.interactions.iter().map(|i| (idx(&i.a), idx(&i.b), i.coef)).collect();
        let bm = names.iter().position(|n| n == "bm");
        let iid: Vec<bool> = names.iter().map(|n| self.iid_features.contains(n)).collect();
        let rho = self.persistence;
        let innov = (1.0 - rho * rho).sqrt();
        let days = business_days(self.start, self.end());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut rows = Vec::with_capacity(self.n_securities * self.n_months);
        let mut prices = BTreeMap::new();
        for s in 0..self.n_securities {
            let id = SecurityId::new(format!("S{s:04}"))?;
            let sector = rng.gen_range(0..SECTORS);
            let quality: f64 = rng.sample(StandardNormal);
            let mut x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let mut risks = Vec::with_capacity(self.n_months);
            for m in 0..self.n_months {
                if m > 0 {
                    for (v, fresh) in x.iter_mut().zip(&iid) {
                        let e: f64 = rng.sample(StandardNormal);
                        *v = if *fresh { e } else { rho * *v + innov * e };
                    }
                }
                let month = self.start.add_months(m as i64);
                let mut r = self.base_risk;
                r += coef.iter().map(|&(j, c)| c * x[j]).sum::<f64>();
                r += inter.iter().map(|&(a, b, c)| c * x[a] * x[b]).sum::<f64>();
                if self.sector {
                    r += 0.05 * (sector as f64 / (SECTORS - 1) as f64 - 0.5);
                }
                if self.esg {
                    r -= self.esg_effect * quality;
                }
                r = r.max(RISK_FLOOR);
                if let Some(c) = &self.crisis {
                    if month >= c.from && month <= c.to {
                        r *= c.multiplier;
                    }
                }
                risks.push(r);

                let mut values: Vec<Option<f64>> = x
                    .iter()
                    .enumerate()
                    .map(|(j, v)| Some(if Some(j) == bm { v.exp() } else { *v }))
                    .collect();
                if self.sector {
                    values.push(Some(sector as f64));
                }
                if self.esg {
                    let mut noisy = |scale: f64| quality + scale * rng.sample::<f64, _>(StandardNormal);
                    values.push(Some(noisy(0.1)));
                    for _ in 0..3 {
                        values.push(Some(noisy(0.3)));
                    }
                    for _ in 0..REFINED_ESG {
                        values.push(Some(noisy(0.6)));
                    }
                }
                for v in values.iter_mut() {
                    if self.missing_fraction > 0.0 && rng.gen::<f64>() < self.missing_fraction {
                        *v = None;
                    }
                }
                rows.push(PanelRow {
                    security: id.clone(),
                    month,
                    values,
                    target: None,
                });
            }
            let path = price_path(&days, self.start, &risks, self.noise, &mut rng);
            prices.insert(id.clone(), PriceSeries::new(id, days.clone(), path)?);
        }
        Ok(SyntheticData {
            panel: PanelDataset::from_rows(specs.clone(), rows, false)?,
            prices,
            features: specs,
        })
    }
}

/// Monday-to-Friday dates covering the given months.
pub fn business_days(from: MonthStamp, to: MonthStamp) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut d = from.first_day();
    let end = to.last_day();
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Each month the log price falls linearly by `risk` to a mid-month trough
/// and climbs back to its opening level on the last business day.
fn price_path(days: &[NaiveDate], start: MonthStamp, risks: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(days.len());
    let mut walk = 0.0;
    let mut i = 0;
    while i < days.len() {
        let month = MonthStamp::from_date(days[i]);
        let j = i + days[i..].iter().take_while(|d| MonthStamp::from_date(**d) == month).count();
        let n = j - i;
        let risk = risks[start.months_until(month) as usize];
        let mid = (n - 1) as f64 / 2.0;
        for k in 0..n {
            let depth = if mid > 0.0 { 1.0 - ((k as f64 - mid).abs() / mid) } else { 0.0 };
            if noise > 0.0 {
                walk += noise * rng.sample::<f64, _>(StandardNormal);
            }
            out.push(50.0 * (walk - risk * depth).exp());
        }
        i = j;
    }
    out
}

/// Writes `panel.csv`, `prices.csv` and `features.json` into `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_panel_csv(&data.panel, std::fs::File::create(dir.join("panel.csv"))?)?;
    write_prices_csv(&data.prices, std::fs::File::create(dir.join("prices.csv"))?)?;
    std::fs::write(dir.join("features.json"), serde_json::to_string_pretty(&data.features)? + "\n")?;
    Ok(())
}
