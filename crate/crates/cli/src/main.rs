use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drawdown_lab_core::drawdown::{forward_mdd_panel, read_prices_csv, write_targets_csv};
use drawdown_lab_core::eval::ImportanceOptions;
use drawdown_lab_core::lab::synth::{write_synthetic, CrisisWindow};
use drawdown_lab_core::lab::{
    recompute_importance, render_report, resolved_config_json, run_experiment, ExperimentConfig, MonthRange,
    SyntheticSpec,
};
use drawdown_lab_core::{Metric, ModelKind, MonthStamp, SavedModel};

const RUN_OUTPUTS: &str = "\
Outputs (in data.output_dir):
  config-resolved.json  config after defaults and overrides, split, per-model seeds
  metrics.json          per model: seed, hyperparams, overall {mae, ccc, n},
                        per_date, by_cap_quartile {top, bottom}, quantiles
  per_date.csv          model,date,n,mae,ccc[,top_mae,top_ccc,bottom_mae,bottom_ccc]
  quantiles.csv         model,window,group,n,predicted_mean,realized_mean,
                        realized_std,p10..p90 (group 1 = lowest predicted drawdown)
  importance.json       per model: [{feature, score, std_error, sign (+/-), rank}]
  predictions.csv       model,security_id,date,target,prediction
  hyperparams.json      chosen hyperparameters per model (prior input for later runs)
  tuning.json           validation score of every grid point
  models/<MODEL>.json   fitted model with its columns
  prep_audit.csv        date,imputed_cells,empty_columns
  audit.log             filter counts, target join, split ranges, guard checks";

const REPORT_OUTPUTS: &str = "\
Outputs:
  metric_series.csv     date,<model>_mae,<model>_ccc,... one row per test month
  quantile_density.csv  model,window,group,quantile,realized
  importance_bars.csv   model,feature,rank,score,std_error,sign,relative";

#[derive(Parser)]
#[command(name = "drawdown-lab", version, about = "Cross-sectional maximum-drawdown forecasting lab")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic panel: panel.csv, prices.csv, features.json.
    Synth(SynthArgs),
    /// Compute forward maximum-drawdown targets from daily prices.
    ///
    /// Output columns: security_id,date,mdd,window_start,window_end.
    Mdd(MddArgs),
    /// Run a full experiment from a TOML config.
    #[command(after_help = RUN_OUTPUTS)]
    Run(RunArgs),
    /// Recompute permutation importance for a saved model.
    ///
    /// Writes a JSON array of {feature, score, std_error, sign, rank}.
    Importance(ImportanceArgs),
    /// Render plot-ready CSVs from a finished run directory.
    #[command(after_help = REPORT_OUTPUTS)]
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with a [synth] table (or a bare spec); flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    securities: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    /// First month, YYYY-MM.
    #[arg(long)]
    start: Option<MonthStamp>,
    /// Daily log-price noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of feature cells left missing.
    #[arg(long)]
    missing: Option<f64>,
    /// Crisis window `FROM..TO`, risk multiplied by --crisis-multiplier.
    #[arg(long)]
    crisis: Option<String>,
    #[arg(long, default_value_t = 3.0)]
    crisis_multiplier: f64,
    /// Add a 9-level sector code.
    #[arg(long)]
    sector: bool,
    /// Add ESG columns.
    #[arg(long)]
    esg: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MddArgs {
    /// Prices CSV: security_id,date,price.
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, default_value_t = 12)]
    horizon: u32,
    /// Prediction months `FROM..TO`; defaults to every month the prices span.
    #[arg(long)]
    months: Option<String>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set models.seed=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over the file and DRAWDOWN_LAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Feature-set case, e.g. FC0 or trimmed_FC+ESG.
    #[arg(long)]
    case: Option<String>,
    /// Comma-separated models, e.g. OLS,RF,XGBoost.
    #[arg(long, value_delimiter = ',')]
    models: Vec<ModelKind>,
    /// Output directory (relative to the working directory).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Print the resolved config and exit without touching any file.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ImportanceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Saved model file (models/<MODEL>.json from a run).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// mae or ccc.
    #[arg(long, default_value = "mae")]
    metric: String,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run output directory.
    #[arg(long)]
    run: PathBuf,
    /// Where to write the tables; defaults to <run>/report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<MonthRange> {
    let (a, b) = s.split_once("..").with_context(|| format!("`{s}` is not FROM..TO"))?;
    Ok(MonthRange::new(a.parse()?, b.parse()?)?)
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(case) = &args.case {
        overrides.push(format!("case.name=\"{case}\""));
    }
    if !args.models.is_empty() {
        let names: Vec<String> = args.models.iter().map(|m| format!("\"{m}\"")).collect();
        overrides.push(format!("models.run=[{}]", names.join(",")));
    }
    if let Some(seed) = args.seed {
        overrides.push(format!("models.seed={seed}"));
    }
    let mut cfg = ExperimentConfig::load(&args.config, &overrides)?;
    if let Some(out) = &args.output {
        cfg.data.output_dir = std::env::current_dir()?.join(out);
    }
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut table: toml::Table = text.parse()?;
            let inner = table.remove("synth").unwrap_or(toml::Value::Table(table));
            inner.try_into()?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.securities {
        spec.n_securities = v;
    }
    if let Some(v) = a.months {
        spec.n_months = v;
    }
    if let Some(v) = a.features {
        spec.n_features = v;
    }
    if let Some(v) = a.start {
        spec.start = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.missing {
        spec.missing_fraction = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(c) = &a.crisis {
        let r = parse_range(c)?;
        spec.crisis = Some(CrisisWindow {
            from: r.from,
            to: r.to,
            multiplier: a.crisis_multiplier,
        });
    }
    spec.sector |= a.sector;
    spec.esg |= a.esg;
    let data = spec.generate()?;
    write_synthetic(&data, &a.out)?;
    println!(
        "wrote {} rows x {} features for {} securities to {}",
        data.panel.n_rows(),
        data.panel.n_features(),
        data.prices.len(),
        a.out.display()
    );
    Ok(())
}

fn mdd(a: MddArgs) -> Result<()> {
    let series = read_prices_csv(File::open(&a.prices).with_context(|| format!("opening {}", a.prices.display()))?)?;
    let months: Vec<MonthStamp> = match &a.months {
        Some(r) => {
            let r = parse_range(r)?;
            MonthStamp::range_inclusive(r.from, r.to).collect()
        }
        None => {
            let dates = series.values().flat_map(|s| s.timestamps().iter().copied());
            let (Some(lo), Some(hi)) = (dates.clone().min(), dates.max()) else {
                bail!("prices file has no rows");
            };
            MonthStamp::range_inclusive(MonthStamp::from_date(lo), MonthStamp::from_date(hi)).collect()
        }
    };
    let targets = forward_mdd_panel(&series, &months, a.horizon)?;
    match &a.out {
        Some(p) => write_targets_csv(&targets, BufWriter::new(File::create(p)?))?,
        None => write_targets_csv(&targets, std::io::stdout().lock())?,
    }
    log::info!("{} targets", targets.len());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    if a.dry_run {
        print!("{}", resolved_config_json(&cfg)?);
        return Ok(());
    }
    let outcome = run_experiment(&cfg)?;
    for m in &outcome.models {
        println!(
            "{:<8} mae {:.6} ccc {:.6} n {}",
            m.kind.to_string(),
            m.report.overall.mae,
            m.report.overall.ccc,
            m.report.overall.n
        );
    }
    println!("outputs in {}", cfg.data.output_dir.display());
    Ok(())
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let saved: SavedModel = serde_json::from_str(&text)?;
    let metric = match a.metric.to_ascii_lowercase().as_str() {
        "mae" => Metric::Mae,
        "ccc" => Metric::Ccc,
        other => bail!("unknown metric `{other}`; use mae or ccc"),
    };
    let opts = ImportanceOptions {
        metric,
        repeats: a.repeats,
        seed: saved.seed,
    };
    let entries = recompute_importance(&cfg, &saved, &opts)?;
    let json = serde_json::to_string_pretty(&entries)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.run.join("report"));
    let files = render_report(&a.run, &out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Mdd(a) => mdd(a),
        Command::Run(a) => run(a),
        Command::Importance(a) => importance(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
