use msa_autodiff::{Real, Tensor};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-k principal directions of a representation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// `k` unit-norm, mutually orthogonal directions of length `d`.
    pub components: Vec<Vec<f64>>,
    /// `N x k` coordinates of the centered rows.
    pub projected: Vec<Vec<f64>>,
    /// Variance along each component (`sigma^2 / (N - 1)`), descending.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

fn to_matrix<F: Real>(reps: &Tensor<F>) -> Result<DMatrix<f64>> {
    let shape = reps.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("representations must be [N, d], got {shape:?}")));
    }
    let (n, d) = (shape[0], shape[1]);
    let data: Vec<f64> = reps.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite representation at row {}", i / d.max(1))));
    }
    Ok(DMatrix::from_row_slice(n, d, &data))
}

/// PCA through the SVD of the mean-centered matrix. Each component is
/// signed so that its largest-magnitude entry is positive.
pub fn pca_project<F: Real>(reps: &Tensor<F>, k: usize) -> Result<ProjectionResult> {
    let x = to_matrix(reps)?;
    let (n, d) = x.shape();
    if k == 0 || n < k || d < k {
        return Err(Error::Validation(format!("pca needs N >= k and d >= k (N={n}, d={d}, k={k})")));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[i];
        explained_variance.push(s * s / denom);
        components.push(c);
    }
    let projected = (0..n)
        .map(|r| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(r, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(ProjectionResult {
        components,
        projected,
        explained_variance,
        mean,
    })
}

/// Sum of squared residuals after reconstructing the centered rows from the
/// first `k` components.
pub fn reconstruction_error<F: Real>(reps: &Tensor<F>, k: usize) -> Result<f64> {
    let p = pca_project(reps, k)?;
    let x = to_matrix(reps)?;
    let (n, d) = x.shape();
    let mut err = 0.0;
    for r in 0..n {
        for j in 0..d {
            let recon: f64 = p.mean[j] + (0..k).map(|c| p.projected[r][c] * p.components[c][j]).sum::<f64>();
            err += (x[(r, j)] - recon).powi(2);
        }
    }
    Ok(err)
}
