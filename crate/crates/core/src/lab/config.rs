//! Experiment configuration: one TOML file with sections `[data]`, `[case]`,
//! `[models]`, `[split]`, `[grids]` and `[synth]`.
//!
//! Precedence, lowest first: file, `DRAWDOWN_LAB_SEED`, `--set key=value`
//! overrides (dotted keys), an explicit seed flag.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::model::{Grids, ModelKind};
use crate::panel::FeatureGroup;
use crate::prep::FilterPolicy;

use super::split::{MonthRange, SplitPreset, SplitSpec};
use super::synth::SyntheticSpec;

pub const SEED_ENV: &str = "DRAWDOWN_LAB_SEED";

/// Feature-set cases. `FC0` is the long-window run without ESG data; the
/// other eight run on the ESG sample with the non-linear models only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureCase {
    Fc0,
    Fc,
    FcRefinedEsg,
    FcEsgAggregate,
    FcEsg,
    TrimmedFc,
    TrimmedFcRefinedEsg,
    TrimmedFcEsgAggregate,
    TrimmedFcEsg,
}

impl FeatureCase {
    pub const ALL: [FeatureCase; 9] = [
        FeatureCase::Fc0,
        FeatureCase::Fc,
        FeatureCase::FcRefinedEsg,
        FeatureCase::FcEsgAggregate,
        FeatureCase::FcEsg,
        FeatureCase::TrimmedFc,
        FeatureCase::TrimmedFcRefinedEsg,
        FeatureCase::TrimmedFcEsgAggregate,
        FeatureCase::TrimmedFcEsg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureCase::Fc0 => "FC0",
            FeatureCase::Fc => "FC",
            FeatureCase::FcRefinedEsg => "FC+refined_ESG",
            FeatureCase::FcEsgAggregate => "FC+E/S/G",
            FeatureCase::FcEsg => "FC+ESG",
            FeatureCase::TrimmedFc => "trimmed_FC",
            FeatureCase::TrimmedFcRefinedEsg => "trimmed_FC+refined_ESG",
            FeatureCase::TrimmedFcEsgAggregate => "trimmed_FC+E/S/G",
            FeatureCase::TrimmedFcEsg => "trimmed_FC+ESG",
        }
    }

    pub fn is_esg_mode(&self) -> bool {
        *self != FeatureCase::Fc0
    }

    pub fn groups(&self) -> BTreeSet<FeatureGroup> {
        use FeatureCase::*;
        let base = match self {
            Fc0 | Fc | FcRefinedEsg | FcEsgAggregate | FcEsg => FeatureGroup::Fc,
            _ => FeatureGroup::TrimmedFc,
        };
        let extra = match self {
            FcRefinedEsg | TrimmedFcRefinedEsg => Some(FeatureGroup::RefinedEsg),
            FcEsgAggregate | TrimmedFcEsgAggregate => Some(FeatureGroup::EsgAggregate),
            FcEsg | TrimmedFcEsg => Some(FeatureGroup::EsgSingle),
            _ => None,
        };
        std::iter::once(base).chain(extra).collect()
    }

    pub fn default_split(&self) -> SplitPreset {
        if self.is_esg_mode() {
            SplitPreset::Esg
        } else {
            SplitPreset::Full
        }
    }

    pub fn default_models(&self) -> Vec<ModelKind> {
        if self.is_esg_mode() {
            ModelKind::NON_LINEAR.to_vec()
        } else {
            ModelKind::ALL.to_vec()
        }
    }

    fn index(&self) -> u64 {
        Self::ALL.iter().position(|c| c == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for FeatureCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureCase::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown feature case `{s}`")))
    }
}

impl TryFrom<String> for FeatureCase {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureCase> for String {
    fn from(c: FeatureCase) -> String {
        c.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub panel: PathBuf,
    /// Daily prices for target construction. Without it the panel's
    /// `target` column is used as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PathBuf>,
    /// Feature metadata (kinds, lags, groups) as a JSON array.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub horizon_months: u32,
    #[serde(default = "default_size_feature")]
    pub size_feature: String,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_horizon() -> u32 {
    12
}

fn default_size_feature() -> String {
    "mve".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: FeatureCase,
    /// `hyperparams.json` from an earlier run, required when the split has
    /// no validation range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_hyperparams: Option<PathBuf>,
    /// Refit the final model on train plus validation instead of train only.
    #[serde(default)]
    pub refit_on_all_pre_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    /// Models to run; defaults to every model allowed for the case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<Vec<ModelKind>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metric")]
    pub tuning_metric: Metric,
    #[serde(default = "default_true")]
    pub importance: bool,
    #[serde(default = "default_metric")]
    pub importance_metric: Metric,
    #[serde(default = "default_repeats")]
    pub importance_repeats: usize,
    #[serde(default = "default_groups")]
    pub quantile_groups: usize,
    /// Quantile tables are also emitted per block of this many test months.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile_window_months: Option<usize>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            run: None,
            seed: 0,
            tuning_metric: Metric::Mae,
            importance: true,
            importance_metric: Metric::Mae,
            importance_repeats: 5,
            quantile_groups: 10,
            quantile_window_months: None,
        }
    }
}

fn default_metric() -> Metric {
    Metric::Mae
}

fn default_true() -> bool {
    true
}

fn default_repeats() -> usize {
    5
}

fn default_groups() -> usize {
    10
}

/// Either a preset or explicit ranges; explicit ranges win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<SplitPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<MonthRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<MonthRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<MonthRange>,
}

impl SplitConfig {
    pub fn resolve(&self, case: FeatureCase) -> Result<SplitSpec> {
        let spec = match (self.train, self.test) {
            (Some(train), Some(test)) => SplitSpec {
                train,
                validation: self.validation,
                test,
            },
            (None, None) if self.validation.is_none() => {
                SplitSpec::preset(self.preset.unwrap_or_else(|| case.default_split()))
            }
            _ => return Err(Error::Config("explicit split needs both train and test ranges".into())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub case: CaseConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SyntheticSpec>,
}

impl ExperimentConfig {
    /// Reads the TOML file, applies the seed variable and the overrides,
    /// resolves relative paths against the file's directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, base, overrides, std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn from_toml_str(text: &str, base: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
            set_dotted(&mut table, "models.seed", toml::Value::Integer(seed as i64))?;
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table).try_into()?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.panel);
        fix(&mut self.data.output_dir);
        if let Some(p) = self.data.prices.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.features.as_mut() {
            fix(p);
        }
        if let Some(p) = self.case.prior_hyperparams.as_mut() {
            fix(p);
        }
    }

    pub fn models(&self) -> Vec<ModelKind> {
        self.models.run.clone().unwrap_or_else(|| self.case.name.default_models())
    }

    pub fn split(&self) -> Result<SplitSpec> {
        self.split.resolve(self.case.name)
    }

    pub fn validate(&self) -> Result<()> {
        let case = self.case.name;
        let models = self.models();
        if models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        let unique: BTreeSet<_> = models.iter().collect();
        if unique.len() != models.len() {
            return Err(Error::Config("model list has duplicates".into()));
        }
        if case.is_esg_mode() {
            if let Some(m) = models.iter().find(|m| !m.is_non_linear()) {
                return Err(Error::Config(format!(
                    "case {case} runs only RF, XGBoost and MLP; `{m}` is not allowed"
                )));
            }
        }
        let split = self.split()?;
        if split.validation.is_none() {
            if !case.is_esg_mode() {
                return Err(Error::Config(format!("case {case} needs a validation range")));
            }
            if self.case.prior_hyperparams.is_none() {
                return Err(Error::Config(
                    "split has no validation range: set case.prior_hyperparams to an earlier hyperparams.json".into(),
                ));
            }
        }
        if self.data.horizon_months == 0 {
            return Err(Error::Config("horizon_months must be at least 1".into()));
        }
        if self.models.importance_repeats == 0 || self.models.quantile_groups == 0 {
            return Err(Error::Config("importance_repeats and quantile_groups must be at least 1".into()));
        }
        if self.models.quantile_window_months == Some(0) {
            return Err(Error::Config("quantile_window_months must be at least 1".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    /// Seed for one (case, model) cell of the experiment matrix.
    pub fn cell_seed(&self, kind: ModelKind) -> u64 {
        cell_seed(self.models.seed, self.case.name, kind)
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `mix(mix(master ^ case << 32) ^ model)`, with case and model taken as
/// their positions in the canonical lists.
pub fn cell_seed(master: u64, case: FeatureCase, kind: ModelKind) -> u64 {
    mix(mix(master ^ (case.index() << 32)) ^ kind.seed_offset())
}

/// Values parse as TOML when they can (`3`, `true`, `["RF"]`), otherwise
/// they are taken as bare strings.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[data]
panel = "panel.csv"
prices = "prices.csv"

[case]
name = "FC0"

[models]
run = ["OLS", "RF"]
seed = 7
"#;

    fn load(text: &str, overrides: &[&str], env: Option<&str>) -> Result<ExperimentConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml_str(text, Path::new("/cfg"), &o, env)
    }

    #[test]
    fn defaults_and_paths() {
        let c = load(BASE, &[], None).unwrap();
        assert_eq!(c.data.panel, PathBuf::from("/cfg/panel.csv"));
        assert_eq!(c.data.output_dir, PathBuf::from("/cfg/out"));
        assert_eq!(c.data.horizon_months, 12);
        assert_eq!(c.models(), vec![ModelKind::Ols, ModelKind::Rf]);
        assert_eq!(c.split().unwrap(), SplitSpec::preset(SplitPreset::Full));
    }

    #[test]
    fn precedence_env_then_overrides() {
        assert_eq!(load(BASE, &[], Some("11")).unwrap().models.seed, 11);
        let c = load(BASE, &["models.seed=5", "split.preset=full2017"], Some("11")).unwrap();
        assert_eq!(c.models.seed, 5);
        assert_eq!(c.split().unwrap().test.to.to_string(), "2017-06");
        let c = load(BASE, &["data.size_feature=cap", "models.run=[\"XGBoost\"]"], None).unwrap();
        assert_eq!(c.data.size_feature, "cap");
        assert_eq!(c.models(), vec![ModelKind::Xgboost]);
        assert!(load(BASE, &["models.seed"], None).is_err());
        assert!(load(BASE, &[], Some("x")).is_err());
        assert!(load(BASE, &["models.bogus=1"], None).is_err());
    }

    #[test]
    fn esg_cases_reject_linear_models_and_need_prior_params() {
        let esg = BASE.replace("FC0", "trimmed_FC+ESG");
        let e = load(&esg, &[], None).unwrap_err().to_string();
        assert!(e.contains("OLS"), "{e}");
        let e = load(&esg, &["models.run=[\"RF\"]"], None).unwrap_err().to_string();
        assert!(e.contains("prior_hyperparams"), "{e}");
        let c = load(&esg, &["models.run=[\"RF\"]", "case.prior_hyperparams=h.json"], None).unwrap();
        assert!(c.split().unwrap().validation.is_none());
        assert_eq!(c.case.prior_hyperparams, Some(PathBuf::from("/cfg/h.json")));
    }

    #[test]
    fn case_groups_and_names_round_trip() {
        for c in FeatureCase::ALL {
            assert_eq!(c.name().parse::<FeatureCase>().unwrap(), c);
        }
        let g = FeatureCase::TrimmedFcEsgAggregate.groups();
        assert!(g.contains(&FeatureGroup::TrimmedFc) && g.contains(&FeatureGroup::EsgAggregate) && g.len() == 2);
        assert_eq!(FeatureCase::Fc0.groups(), FeatureCase::Fc.groups());
    }

    #[test]
    fn explicit_split_and_cell_seeds() {
        let text = format!(
            "{BASE}\n[split]\ntrain = {{ from = \"2000-01\", to = \"2003-12\" }}\nvalidation = {{ from = \"2004-01\", to = \"2005-12\" }}\ntest = {{ from = \"2006-01\", to = \"2008-12\" }}\n"
        );
        let c = load(&text, &[], None).unwrap();
        assert_eq!(c.split().unwrap().test.months(), 36);
        let bad = text.replace("2004-01", "2003-06");
        assert!(load(&bad, &[], None).is_err());
        let seeds: BTreeSet<u64> = ModelKind::ALL.iter().map(|&k| c.cell_seed(k)).collect();
        assert_eq!(seeds.len(), 9);
        assert_ne!(
            cell_seed(7, FeatureCase::Fc, ModelKind::Rf),
            cell_seed(7, FeatureCase::FcEsg, ModelKind::Rf)
        );
    }
}
