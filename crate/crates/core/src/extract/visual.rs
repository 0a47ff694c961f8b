use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Which CSV columns become feature dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSelection {
    All,
    /// Every column starting with each prefix, groups concatenated in order.
    Prefixes(Vec<String>),
    /// Exact column names, in order.
    Names(Vec<String>),
}

impl ColumnSelection {
    fn resolve(&self, headers: &[String], path: &Path) -> Result<Vec<usize>> {
        match self {
            ColumnSelection::All => Ok((0..headers.len()).collect()),
            ColumnSelection::Prefixes(prefixes) => {
                let mut cols = Vec::new();
                for p in prefixes {
                    let group: Vec<usize> = headers
                        .iter()
                        .enumerate()
                        .filter(|(_, h)| h.starts_with(p.as_str()))
                        .map(|(i, _)| i)
                        .collect();
                    if group.is_empty() {
                        return Err(Error::parse(path, format!("missing column: no header starts with '{p}'")));
                    }
                    cols.extend(group);
                }
                Ok(cols)
            }
            ColumnSelection::Names(names) => names
                .iter()
                .map(|n| {
                    headers
                        .iter()
                        .position(|h| h == n)
                        .ok_or_else(|| Error::parse(path, format!("missing column '{n}'")))
                })
                .collect(),
        }
    }
}

/// Reads frame rows of a headed CSV (headers are trimmed), keeping the
/// selected columns.
pub fn ingest_feature_csv(path: &Path, columns: &ColumnSelection) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = columns.resolve(&headers, path)?;
    if cols.is_empty() {
        return Err(Error::parse(path, "no columns selected"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        for &c in &cols {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    path,
                    format!("non-numeric cell '{cell}' at row {}, column '{}'", r + 1, headers[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("non-finite cell at row {}, column '{}'", r + 1, headers[c]),
                ));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::parse(path, "no data rows"));
    }
    FeatureMatrix::new(rows, cols.len(), data)
}

/// Facial landmark / action-unit CSV ingestion.
pub fn ingest_visual_csv(path: &Path, columns: &ColumnSelection) -> Result<FeatureMatrix> {
    ingest_feature_csv(path, columns)
}
