use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Per-dimension `[means.., stds.., mins.., maxs..]` over all frames; std
/// uses the population convention.
pub fn utterance_stats(seq: &FeatureMatrix) -> Result<Vec<f64>> {
    if seq.rows == 0 || seq.cols == 0 {
        return Err(Error::Validation("utterance_stats needs at least one frame".into()));
    }
    let (t, d) = (seq.rows as f64, seq.cols);
    let mut mean = vec![0.0; d];
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for r in 0..seq.rows {
        for (j, &x) in seq.row(r).iter().enumerate() {
            mean[j] += x;
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; d];
    for r in 0..seq.rows {
        for (j, &x) in seq.row(r).iter().enumerate() {
            var[j] += (x - mean[j]).powi(2);
        }
    }
    let std = var.into_iter().map(|v| (v / t).sqrt());
    Ok(mean.iter().copied().chain(std).chain(min).chain(max).collect())
}
