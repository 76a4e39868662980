//! Plot-ready tables rendered from a finished run directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{write_table, DateMetrics, ImportanceEntry, QuantileTable, Sign};
use crate::panel::MonthStamp;

#[derive(Deserialize)]
struct MetricsEntry {
    model: String,
    per_date: Vec<DateMetrics>,
    quantiles: QuantileTable,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes into `out`:
/// - `metric_series.csv`: `date` then `<model>_mae,<model>_ccc` per model,
///   one row per test month;
/// - `quantile_density.csv`: `model,window,group,quantile,realized`, the
///   realized 10th..90th percentiles of each predicted-drawdown group;
/// - `importance_bars.csv`: `model,feature,rank,score,std_error,sign,relative`
///   with `relative` the score over the model's top score.
pub fn render_report(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let metrics: Vec<MetricsEntry> = read_json(&run_dir.join("metrics.json"))?;
    let importance: BTreeMap<String, Vec<ImportanceEntry>> = read_json(&run_dir.join("importance.json"))?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();

    let mut header = vec!["date".to_string()];
    let mut table: BTreeMap<MonthStamp, Vec<String>> = BTreeMap::new();
    for (i, m) in metrics.iter().enumerate() {
        header.push(format!("{}_mae", m.model));
        header.push(format!("{}_ccc", m.model));
        for d in &m.per_date {
            let row = table.entry(d.month).or_insert_with(|| vec![String::new(); 2 * metrics.len()]);
            row[2 * i] = d.mae.to_string();
            row[2 * i + 1] = d.ccc.map(|c| c.to_string()).unwrap_or_default();
        }
    }
    let rows: Vec<Vec<String>> = table
        .into_iter()
        .map(|(m, vals)| std::iter::once(m.to_string()).chain(vals).collect())
        .collect();
    let path = out.join("metric_series.csv");
    write_table(BufWriter::new(File::create(&path)?), &header, &rows)?;
    files.push(path);

    let header: Vec<String> = ["model", "window", "group", "quantile", "realized"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for m in &metrics {
        for w in &m.quantiles.windows {
            for g in &w.groups {
                for (d, v) in g.realized_deciles.iter().enumerate() {
                    rows.push(vec![
                        m.model.clone(),
                        w.window.clone(),
                        g.group.to_string(),
                        format!("0.{}", d + 1),
                        v.to_string(),
                    ]);
                }
            }
        }
    }
    let path = out.join("quantile_density.csv");
    write_table(BufWriter::new(File::create(&path)?), &header, &rows)?;
    files.push(path);

    let header: Vec<String> =
        ["model", "feature", "rank", "score", "std_error", "sign", "relative"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for (model, entries) in &importance {
        let top = entries.iter().map(|e| e.score).fold(0.0, f64::max);
        let mut sorted: Vec<&ImportanceEntry> = entries.iter().collect();
        sorted.sort_by_key(|e| e.rank);
        for e in sorted {
            let sign = match e.sign {
                Sign::Positive => "+",
                Sign::Negative => "-",
            };
            let relative = if top > 0.0 { e.score / top } else { 0.0 };
            rows.push(vec![
                model.clone(),
                e.feature.clone(),
                e.rank.to_string(),
                e.score.to_string(),
                e.std_error.to_string(),
                sign.to_string(),
                relative.to_string(),
            ]);
        }
    }
    let path = out.join("importance_bars.csv");
    write_table(BufWriter::new(File::create(&path)?), &header, &rows)?;
    files.push(path);
    Ok(files)
}
