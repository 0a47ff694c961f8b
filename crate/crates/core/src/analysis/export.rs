use std::fmt::Write as _;
use std::path::Path;

use super::pca::ProjectionResult;
use crate::error::{Error, Result};
use crate::train::EpochRecord;

/// Parses a `history.jsonl` document.
pub fn read_history(text: &str, origin: &Path) -> Result<Vec<EpochRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(origin, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Plot-ready training curve: `epoch,loss,acc2,f1`.
pub fn curve_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,acc2,f1\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.valid.acc2, r.valid.f1);
    }
    out
}

/// One row of a projection export.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow<'a> {
    pub id: &'a str,
    pub label: f64,
    pub pred: f64,
}

/// Writes `id,x,y,z,label,pred` for a 3-component projection.
pub fn write_projection_csv(path: &Path, projection: &ProjectionResult, rows: &[ProjectionRow<'_>]) -> Result<()> {
    if projection.components.len() != 3 {
        return Err(Error::Validation(format!(
            "projection export needs 3 components, got {}",
            projection.components.len()
        )));
    }
    if projection.projected.len() != rows.len() {
        return Err(Error::Validation(format!(
            "{} projected points for {} rows",
            projection.projected.len(),
            rows.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record(["id", "x", "y", "z", "label", "pred"])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for (row, p) in rows.iter().zip(&projection.projected) {
        w.write_record([
            row.id.to_string(),
            p[0].to_string(),
            p[1].to_string(),
            p[2].to_string(),
            row.label.to_string(),
            row.pred.to_string(),
        ])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
