//! End-to-end run: ingest, targets, preprocessing, case selection, split,
//! tuning, final fits, evaluation and report files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drawdown::{forward_mdd_panel, read_prices_csv, DrawdownTarget};
use crate::error::{Error, Result, StageContext};
use crate::eval::{
    metric_report, per_date_rows, permutation_importance, quantile_analysis, quantile_rows, write_table,
    ImportanceEntry, ImportanceOptions, MetricReport, QuantileTable,
};
use crate::model::{fit_model, Hyperparams, ModelKind, SavedModel, TrainedModel};
use crate::panel::{load_feature_specs, load_panel, Design, MonthStamp, PanelDataset, RowKey, SecurityId};
use crate::prep::{feature_source_months, ImputePolicy, PrepAudit, PrepPipeline, PrepStep};

use super::config::ExperimentConfig;
use super::split::{SplitPart, SplitSpec};
use super::tune::{tune, TuneResult};

/// Preprocessed, case-selected data split into design matrices.
pub struct PreparedData {
    pub split: SplitSpec,
    pub audit: PrepAudit,
    /// Preprocessed rows before case selection (for the size column).
    pub full: PanelDataset,
    pub train: Design,
    pub validation: Option<Design>,
    pub test: Design,
    /// Size feature of each test row, for the cap-quartile breakdown.
    pub test_size: Option<Vec<f64>>,
    /// Target provenance when targets were built from prices.
    pub targets: Option<Vec<DrawdownTarget>>,
    pub checks: Vec<String>,
}

impl PreparedData {
    pub fn part(&self, part: SplitPart) -> Option<&Design> {
        match part {
            SplitPart::Train => Some(&self.train),
            SplitPart::Validation => self.validation.as_ref(),
            SplitPart::Test => Some(&self.test),
        }
    }
}

fn ys(d: &Design) -> Vec<f64> {
    d.y.iter().copied().collect()
}

fn read_inputs(cfg: &ExperimentConfig) -> Result<(PanelDataset, Option<Vec<DrawdownTarget>>)> {
    let specs = cfg.data.features.as_deref().map(load_feature_specs).transpose()?;
    let panel = load_panel(&cfg.data.panel, specs.as_deref())?;
    let Some(prices) = &cfg.data.prices else {
        if !panel.has_target() {
            return Err(Error::Config("panel has no target column and no prices file is configured".into()));
        }
        return Ok((panel, None));
    };
    let series = read_prices_csv(File::open(prices)?)?;
    let targets = forward_mdd_panel(&series, &panel.months(), cfg.data.horizon_months)?;
    Ok((panel, Some(targets)))
}

/// Runs every stage up to the split and checks the protocol guards.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let split = cfg.split()?;
    let (panel, targets) = read_inputs(cfg).stage("ingest")?;

    let mut steps = vec![PrepStep::Filter {
        policy: cfg.data.filter.clone(),
        size_feature: cfg.data.size_feature.clone(),
    }];
    if let Some(t) = &targets {
        steps.push(PrepStep::JoinTargets(t.clone()));
    }
    steps.extend([PrepStep::Lag, PrepStep::ZScore, PrepStep::Impute(ImputePolicy), PrepStep::Encode]);
    let (full, audit) = PrepPipeline::new(steps)?.run(&panel).stage("preprocess")?;

    let selected = full.select_columns(&cfg.case.name.groups()).stage("case selection")?;
    let design = selected.stack();
    if design.n_rows() == 0 {
        return Err(Error::InvalidInput("no rows with a target".into()).in_stage("split"));
    }
    let mut rows: BTreeMap<SplitPart, Vec<usize>> = BTreeMap::new();
    for (i, k) in design.index.iter().enumerate() {
        if let Some(p) = split.part_of(k.month) {
            rows.entry(p).or_default().push(i);
        }
    }
    let take = |p: SplitPart| -> Result<Design> {
        match rows.get(&p) {
            Some(r) => Ok(design.select_rows(r)),
            None => {
                let range = split.range(p).expect("part has a range");
                Err(Error::EmptySlice {
                    from: range.from.to_string(),
                    to: range.to.to_string(),
                }
                .in_stage("split"))
            }
        }
    };
    let train = take(SplitPart::Train)?;
    let validation = split.validation.map(|_| take(SplitPart::Validation)).transpose()?;
    let test = take(SplitPart::Test)?;

    let mut checks = Vec::new();
    let parts: Vec<(SplitPart, &Design)> = [(SplitPart::Train, Some(&train)), (SplitPart::Validation, validation.as_ref()), (SplitPart::Test, Some(&test))]
        .into_iter()
        .filter_map(|(p, d)| d.map(|d| (p, d)))
        .collect();
    let window_starts = targets.as_ref().map(|t| {
        t.iter()
            .map(|t| ((t.security.clone(), t.month), t.window_start))
            .collect::<HashMap<(SecurityId, MonthStamp), NaiveDate>>()
    });
    let features = selected.features();
    for (part, d) in &parts {
        assert_no_lookahead(features, d, window_starts.as_ref()).stage("lookahead check")?;
        checks.push(format!("lookahead ok: {part} ({} rows)", d.n_rows()));
    }
    assert_disjoint(&parts).stage("split check")?;
    checks.push("splits disjoint".into());

    let size_col = full.feature_index(&cfg.data.size_feature);
    let test_size =
        size_col.map(|c| test.source_rows.iter().map(|&r| full.value(r, c).unwrap_or(0.0)).collect::<Vec<f64>>());
    Ok(PreparedData {
        split,
        audit,
        full,
        train,
        validation,
        test,
        test_size,
        targets,
        checks,
    })
}

/// Every feature value of a row was observed at or before its prediction
/// month, and its target window opens strictly after that month ends.
pub fn assert_no_lookahead(
    features: &[crate::panel::FeatureSpec],
    design: &Design,
    window_starts: Option<&HashMap<(SecurityId, MonthStamp), NaiveDate>>,
) -> Result<()> {
    for key in &design.index {
        if let Some(m) = feature_source_months(features, key).into_iter().find(|m| *m > key.month) {
            return Err(Error::Lookahead(format!(
                "{} at {}: feature observed in {m}",
                key.security, key.month
            )));
        }
        if let Some(ws) = window_starts {
            let start = ws.get(&(key.security.clone(), key.month)).ok_or_else(|| {
                Error::Lookahead(format!("{} at {}: target has no window", key.security, key.month))
            })?;
            if *start < key.month.last_day() {
                return Err(Error::Lookahead(format!(
                    "{} at {}: target window opens after {start}",
                    key.security, key.month
                )));
            }
        }
    }
    Ok(())
}

/// No (security, month) row may appear twice, within or across parts.
pub fn assert_disjoint(parts: &[(SplitPart, &Design)]) -> Result<()> {
    let mut seen: HashMap<&RowKey, SplitPart> = HashMap::new();
    for (part, d) in parts {
        for k in &d.index {
            if let Some(prev) = seen.insert(k, *part) {
                return Err(Error::Lookahead(format!(
                    "row {} {} appears in {prev} and {part}",
                    k.security, k.month
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuneResult>,
    #[serde(skip)]
    pub model: Option<TrainedModel>,
    pub predictions: Vec<f64>,
    pub report: MetricReport,
    pub quantiles: QuantileTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<ImportanceEntry>>,
}

pub struct ExperimentOutcome {
    pub prepared: PreparedData,
    pub models: Vec<ModelOutcome>,
    pub files: Vec<PathBuf>,
}

fn load_prior(path: &Path) -> Result<BTreeMap<ModelKind, Hyperparams>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read prior hyperparameters {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Labels each test row with its block of `window` months from the start
/// of the test range.
fn window_labels(months: &[MonthStamp], split: &SplitSpec, window: usize) -> Vec<String> {
    let start = split.test.from;
    months
        .iter()
        .map(|m| {
            let k = start.months_until(*m) as usize / window;
            let from = start.add_months((k * window) as i64);
            let to = from.add_months(window as i64 - 1).min(split.test.to);
            format!("{from}..{to}")
        })
        .collect()
}

pub fn quantile_tables(
    months: &[MonthStamp],
    y: &[f64],
    yhat: &[f64],
    split: &SplitSpec,
    groups: usize,
    window: Option<usize>,
) -> Result<QuantileTable> {
    let mut table = quantile_analysis(&vec!["all".to_string(); y.len()], y, yhat, groups)?;
    if let Some(w) = window {
        let labels = window_labels(months, split, w);
        table.windows.extend(quantile_analysis(&labels, y, yhat, groups)?.windows);
    }
    Ok(table)
}

fn run_model(cfg: &ExperimentConfig, data: &PreparedData, kind: ModelKind, prior: Option<&BTreeMap<ModelKind, Hyperparams>>) -> Result<ModelOutcome> {
    let seed = cfg.cell_seed(kind);
    let (xt, yt) = (&data.train.x, ys(&data.train));
    let val = data.validation.as_ref().map(|v| (&v.x, ys(v)));
    let (hyperparams, tuning) = match (prior, &val) {
        (Some(p), _) => {
            let hp = p
                .get(&kind)
                .cloned()
                .ok_or_else(|| Error::Config(format!("prior hyperparameters have no entry for {kind}")))?;
            (hp, None)
        }
        (None, Some((xv, yv))) => {
            let grid = cfg.grids.expand(kind, xt.ncols());
            let r = tune(&grid, (xt, &yt), (xv, yv), cfg.models.tuning_metric, seed).stage("tune")?;
            (r.best.clone(), Some(r))
        }
        (None, None) => return Err(Error::Config("no validation range and no prior hyperparameters".into())),
    };

    let model = if cfg.case.refit_on_all_pre_test {
        let (x, y) = match &val {
            Some((xv, yv)) => {
                let x = DMatrix::from_fn(xt.nrows() + xv.nrows(), xt.ncols(), |i, j| {
                    if i < xt.nrows() {
                        xt[(i, j)]
                    } else {
                        xv[(i - xt.nrows(), j)]
                    }
                });
                (x, yt.iter().chain(yv).copied().collect::<Vec<f64>>())
            }
            None => (xt.clone(), yt.clone()),
        };
        fit_model(&hyperparams, &x, &y, None, seed)
    } else {
        fit_model(&hyperparams, xt, &yt, val.as_ref().map(|(x, y)| (*x, y.as_slice())), seed)
    }
    .stage("fit")?;

    let test = &data.test;
    let y = ys(test);
    let months = test.months();
    let predictions = model.predict(&test.x).stage("predict")?;
    let report = metric_report(&months, &y, &predictions, data.test_size.as_deref()).stage("evaluate")?;
    let quantiles = quantile_tables(
        &months,
        &y,
        &predictions,
        &data.split,
        cfg.models.quantile_groups,
        cfg.models.quantile_window_months,
    )
    .stage("quantiles")?;
    let importance = if cfg.models.importance {
        let opts = ImportanceOptions {
            metric: cfg.models.importance_metric,
            repeats: cfg.models.importance_repeats,
            seed,
        };
        Some(
            permutation_importance(&model, &test.x, &y, &months, &test.blocks, &test.columns, &opts)
                .stage("importance")?,
        )
    } else {
        None
    };
    Ok(ModelOutcome {
        kind,
        hyperparams,
        seed,
        tuning,
        model: Some(model),
        predictions,
        report,
        quantiles,
        importance,
    })
}

/// Runs the configured models and writes the report files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let prior = cfg.case.prior_hyperparams.as_deref().map(load_prior).transpose().stage("ingest")?;
    let models: Vec<ModelOutcome> = cfg
        .models()
        .par_iter()
        .map(|&kind| run_model(cfg, &prepared, kind, prior.as_ref()).map_err(|e| e.in_stage(kind.name())))
        .collect::<Result<_>>()?;
    let files = write_outputs(cfg, &prepared, &models).stage("write outputs")?;
    Ok(ExperimentOutcome {
        prepared,
        models,
        files,
    })
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    config: &'a ExperimentConfig,
    case: String,
    models: Vec<ModelKind>,
    split: SplitSpec,
    seeds: BTreeMap<String, u64>,
}

/// The config after defaults, overrides and path resolution, with the split
/// and the per-model seeds it implies.
pub fn resolved_config_json(cfg: &ExperimentConfig) -> Result<String> {
    let run = ResolvedRun {
        config: cfg,
        case: cfg.case.name.to_string(),
        models: cfg.models(),
        split: cfg.split()?,
        seeds: cfg.models().iter().map(|&k| (k.to_string(), cfg.cell_seed(k))).collect(),
    };
    Ok(serde_json::to_string_pretty(&run)? + "\n")
}

#[derive(Serialize)]
struct MetricsEntry<'a> {
    model: ModelKind,
    seed: u64,
    hyperparams: &'a Hyperparams,
    #[serde(flatten)]
    report: &'a MetricReport,
    quantiles: &'a QuantileTable,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes the report files. Nothing time-dependent is written, so reruns
/// with the same config and seed produce identical bytes.
pub fn write_outputs(cfg: &ExperimentConfig, data: &PreparedData, models: &[ModelOutcome]) -> Result<Vec<PathBuf>> {
    let dir = &cfg.data.output_dir;
    std::fs::create_dir_all(dir.join("models"))?;
    let mut files = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };

    std::fs::write(out("config-resolved.json"), resolved_config_json(cfg)?)?;
    let metrics: Vec<MetricsEntry> = models
        .iter()
        .map(|m| MetricsEntry {
            model: m.kind,
            seed: m.seed,
            hyperparams: &m.hyperparams,
            report: &m.report,
            quantiles: &m.quantiles,
        })
        .collect();
    write_json(&out("metrics.json"), &metrics)?;

    let mut header = Vec::new();
    let mut rows = Vec::new();
    for m in models {
        let (h, r) = per_date_rows(&m.report);
        header = std::iter::once("model".to_string()).chain(h).collect();
        rows.extend(r.into_iter().map(|r| std::iter::once(m.kind.to_string()).chain(r).collect()));
    }
    write_table(BufWriter::new(File::create(out("per_date.csv"))?), &header, &rows)?;

    let mut header = Vec::new();
    let mut rows = Vec::new();
    for m in models {
        let (h, r) = quantile_rows(&m.quantiles);
        header = std::iter::once("model".to_string()).chain(h).collect();
        rows.extend(r.into_iter().map(|r| std::iter::once(m.kind.to_string()).chain(r).collect()));
    }
    write_table(BufWriter::new(File::create(out("quantiles.csv"))?), &header, &rows)?;

    let importance: BTreeMap<String, &Vec<ImportanceEntry>> = models
        .iter()
        .filter_map(|m| m.importance.as_ref().map(|i| (m.kind.to_string(), i)))
        .collect();
    write_json(&out("importance.json"), &importance)?;

    let hyperparams: BTreeMap<ModelKind, &Hyperparams> = models.iter().map(|m| (m.kind, &m.hyperparams)).collect();
    write_json(&out("hyperparams.json"), &hyperparams)?;
    let tuning: BTreeMap<String, &TuneResult> = models
        .iter()
        .filter_map(|m| m.tuning.as_ref().map(|t| (m.kind.to_string(), t)))
        .collect();
    write_json(&out("tuning.json"), &tuning)?;

    for m in models {
        if let Some(model) = &m.model {
            let saved = SavedModel {
                kind: m.kind,
                hyperparams: m.hyperparams.clone(),
                seed: m.seed,
                columns: data.test.columns.clone(),
                model: model.clone(),
            };
            write_json(&out(&format!("models/{}.json", m.kind)), &saved)?;
        }
    }

    let header: Vec<String> = ["model", "security_id", "date", "target", "prediction"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for m in models {
        for (i, k) in data.test.index.iter().enumerate() {
            rows.push(vec![
                m.kind.to_string(),
                k.security.to_string(),
                k.month.to_string(),
                data.test.y[i].to_string(),
                m.predictions[i].to_string(),
            ]);
        }
    }
    write_table(BufWriter::new(File::create(out("predictions.csv"))?), &header, &rows)?;

    data.audit.write_csv(BufWriter::new(File::create(out("prep_audit.csv"))?))?;
    std::fs::write(out("audit.log"), audit_log(cfg, data, models))?;
    Ok(files)
}

fn audit_log(cfg: &ExperimentConfig, data: &PreparedData, models: &[ModelOutcome]) -> String {
    let mut s = String::new();
    let a = &data.audit;
    let _ = writeln!(s, "case {}", cfg.case.name);
    let _ = writeln!(s, "steps: {}", a.steps.join(" -> "));
    if let Some(f) = &a.filter {
        let _ = writeln!(
            s,
            "filters: {} rows in, {} non-positive, {} smallest, {} short history, {} securities removed",
            f.rows_in, f.dropped_non_positive, f.dropped_small, f.dropped_short_history, f.securities_removed
        );
    }
    match &a.targets {
        Some(t) => {
            let _ = writeln!(
                s,
                "targets: {} securities without prices, {} rows without a target",
                t.absent_securities, t.rows_without_target
            );
        }
        None => {
            let _ = writeln!(s, "targets: taken from the panel");
        }
    }
    let imputed: usize = a.imputation.iter().map(|d| d.imputed_cells).sum();
    let _ = writeln!(s, "imputed cells: {imputed} over {} dates", a.imputation.len());
    let _ = writeln!(s, "split: train {}", data.split.train);
    if let Some(v) = data.split.validation {
        let _ = writeln!(s, "split: validation {v}");
    }
    let _ = writeln!(s, "split: test {}", data.split.test);
    let _ = writeln!(s, "design columns: {}", data.test.columns.join(","));
    for c in &data.checks {
        let _ = writeln!(s, "{c}");
    }
    for m in models {
        let how = if m.tuning.is_some() { "tuned" } else { "prior" };
        let _ = writeln!(
            s,
            "{}: seed {} ({how}) mae {} ccc {}",
            m.kind, m.seed, m.report.overall.mae, m.report.overall.ccc
        );
    }
    s
}

/// Recomputes permutation importance for a saved model on the configured
/// test range.
pub fn recompute_importance(
    cfg: &ExperimentConfig,
    saved: &SavedModel,
    opts: &ImportanceOptions,
) -> Result<Vec<ImportanceEntry>> {
    let data = prepare(cfg)?;
    let test = &data.test;
    if saved.columns != test.columns {
        return Err(Error::ShapeMismatch {
            expected: saved.columns.len(),
            found: test.columns.len(),
        }
        .in_stage("importance"));
    }
    permutation_importance(&saved.model, &test.x, &ys(test), &test.months(), &test.blocks, &test.columns, opts)
        .stage("importance")
}
