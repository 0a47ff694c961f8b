use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How continuous scores are split into two classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryMode {
    /// Negative (< 0) vs non-negative (>= 0), over all samples.
    #[default]
    NonNegative,
    /// Negative vs positive, dropping samples whose label is exactly 0.
    NegPos,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    /// Support-weighted mean of the two per-class F1 scores.
    #[default]
    Weighted,
    /// F1 of the non-negative (positive) class only.
    Positive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub binary: BinaryMode,
    pub f1: F1Mode,
}

/// Acc-2, F1, MAE and Pearson correlation of one prediction set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: f64,
    pub n: usize,
}

/// Like [`MetricReport`], but with `corr` left empty instead of failing when
/// either vector has zero variance (early training epochs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialMetrics {
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: Option<f64>,
    pub n: usize,
}

impl PartialMetrics {
    pub fn complete(self) -> Result<MetricReport> {
        let corr = self
            .corr
            .ok_or_else(|| Error::UndefinedMetric("corr: zero variance in predictions or labels".into()))?;
        Ok(MetricReport {
            acc2: self.acc2,
            f1: self.f1,
            mae: self.mae,
            corr,
            n: self.n,
        })
    }
}

impl From<MetricReport> for PartialMetrics {
    fn from(m: MetricReport) -> Self {
        PartialMetrics {
            acc2: m.acc2,
            f1: m.f1,
            mae: m.mae,
            corr: Some(m.corr),
            n: m.n,
        }
    }
}

/// Acc-2 and F1 only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub acc2: f64,
    pub f1: f64,
    pub n: usize,
}

fn check_lengths(preds: &[f64], labels: &[f64], min: usize) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.len() < min {
        return Err(Error::Validation(format!("need at least {min} samples, got {}", preds.len())));
    }
    if let Some(i) = preds.iter().chain(labels).position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at position {i}")));
    }
    Ok(())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if a.len() != b.len() || a.len() < 2 || constant(a) || constant(b) {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Binary accuracy and F1 of the thresholded scores.
pub fn classification_metrics(preds: &[f64], labels: &[f64], opts: &MetricOptions) -> Result<ClassMetrics> {
    check_lengths(preds, labels, 1)?;
    // confusion[label_class][pred_class], class 1 = non-negative
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels) {
        if opts.binary == BinaryMode::NegPos && l == 0.0 {
            continue;
        }
        let (lc, pc) = match opts.binary {
            BinaryMode::NonNegative => (usize::from(l >= 0.0), usize::from(p >= 0.0)),
            BinaryMode::NegPos => (usize::from(l > 0.0), usize::from(p > 0.0)),
        };
        confusion[lc][pc] += 1;
    }
    let n = confusion.iter().flatten().sum::<usize>();
    if n == 0 {
        return Err(Error::UndefinedMetric("acc2: no sample with a non-zero label".into()));
    }
    let class_f1 = |c: usize| {
        let tp = confusion[c][c] as f64;
        let fp = confusion[1 - c][c] as f64;
        let fneg = confusion[c][1 - c] as f64;
        if tp + fp + fneg == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    };
    let acc2 = (confusion[0][0] + confusion[1][1]) as f64 / n as f64;
    let f1 = match opts.f1 {
        F1Mode::Weighted => (0..2)
            .map(|c| class_f1(c) * (confusion[c][0] + confusion[c][1]) as f64 / n as f64)
            .sum(),
        F1Mode::Positive => class_f1(1),
    };
    Ok(ClassMetrics { acc2, f1, n })
}

/// All four metrics, reporting an undefined correlation as `None`.
pub fn compute_metrics_lenient(preds: &[f64], labels: &[f64], opts: &MetricOptions) -> Result<PartialMetrics> {
    check_lengths(preds, labels, 2)?;
    let class = classification_metrics(preds, labels, opts)?;
    let mae = preds.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / preds.len() as f64;
    Ok(PartialMetrics {
        acc2: class.acc2,
        f1: class.f1,
        mae,
        corr: pearson(preds, labels),
        n: preds.len(),
    })
}

pub fn compute_metrics_with(preds: &[f64], labels: &[f64], opts: &MetricOptions) -> Result<MetricReport> {
    compute_metrics_lenient(preds, labels, opts)?.complete()
}

/// Acc-2 / weighted F1 / MAE / Pearson with the default binarization.
pub fn compute_metrics(preds: &[f64], labels: &[f64]) -> Result<MetricReport> {
    compute_metrics_with(preds, labels, &MetricOptions::default())
}
