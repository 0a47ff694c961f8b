use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Validation(format!("unknown report format '{other}' (md, csv, json)"))),
        }
    }
}

/// One benchmark cell group: mean test metrics of a model on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    /// `None` when the correlation is undefined.
    #[serde(default)]
    pub corr: Option<f64>,
}

impl From<MetricReport> for BenchmarkEntry {
    fn from(m: MetricReport) -> Self {
        BenchmarkEntry {
            acc2: m.acc2,
            f1: m.f1,
            mae: m.mae,
            corr: Some(m.corr),
        }
    }
}

/// model -> dataset -> entry, in insertion order.
pub type BenchmarkResults = IndexMap<String, IndexMap<String, BenchmarkEntry>>;

fn dataset_columns(results: &BenchmarkResults) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for per_model in results.values() {
        for ds in per_model.keys() {
            if !cols.contains(ds) {
                cols.push(ds.clone());
            }
        }
    }
    cols
}

fn cells(entry: Option<&BenchmarkEntry>) -> [String; 4] {
    match entry {
        Some(e) => [
            format!("{:.2}", e.acc2 * 100.0),
            format!("{:.2}", e.f1 * 100.0),
            format!("{:.3}", e.mae),
            e.corr.map_or_else(|| "-".to_string(), |c| format!("{c:.3}")),
        ],
        None => std::array::from_fn(|_| "-".to_string()),
    }
}

const METRIC_HEADERS: [&str; 4] = ["Acc-2", "F1", "MAE", "Corr"];

/// Benchmark comparison table: one row per model, Acc-2(%) / F1(%) / MAE /
/// Corr per dataset, "-" where a model has no result.
pub fn make_benchmark_report(results: &BenchmarkResults, format: ReportFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Validation("no benchmark results to report".into()));
    }
    let datasets = dataset_columns(results);
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Model |");
            for ds in &datasets {
                for h in METRIC_HEADERS {
                    let _ = write!(out, " {ds} {h} |");
                }
            }
            out.push_str("\n|---|");
            for _ in 0..datasets.len() * 4 {
                out.push_str("---|");
            }
            out.push('\n');
            for (model, per) in results {
                let _ = write!(out, "| {model} |");
                for ds in &datasets {
                    for c in cells(per.get(ds)) {
                        let _ = write!(out, " {c} |");
                    }
                }
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["model".to_string()];
            for ds in &datasets {
                header.extend(METRIC_HEADERS.iter().map(|h| format!("{ds} {h}")));
            }
            w.write_record(&header).map_err(|e| Error::Validation(e.to_string()))?;
            for (model, per) in results {
                let mut row = vec![model.clone()];
                for ds in &datasets {
                    row.extend(cells(per.get(ds)));
                }
                w.write_record(&row).map_err(|e| Error::Validation(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
            out = String::from_utf8(bytes).expect("csv output is utf-8");
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(results)?;
            out.push('\n');
        }
    }
    Ok(out)
}

/// Inverse of the JSON report format.
pub fn parse_benchmark_json(text: &str) -> Result<BenchmarkResults> {
    Ok(serde_json::from_str(text)?)
}
