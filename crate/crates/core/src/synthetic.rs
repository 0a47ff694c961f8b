//! Generated datasets with a known latent structure, for learnability and
//! robustness checks.
//!
//! Each modality carries one latent `z_m ~ U(-range, range)`, written into
//! every valid frame along a fixed random unit direction plus Gaussian
//! noise. The label is `clip(sum_m z_m, lo, hi)`, so the sign of the summed
//! latents classifies every sample correctly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bundle::{FeatureBundle, InstanceType, Manifest, Modality, ModalityBlock, SampleMeta, Scenario, Split};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seq_len: usize,
    /// Shortest sample length; lengths are uniform in `[min_len, seq_len]`.
    pub min_len: usize,
    pub feature_dims: BTreeMap<Modality, usize>,
    pub latent_range: f64,
    pub noise_std: f64,
    pub label_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 700,
            n_valid: 150,
            n_test: 150,
            seq_len: 20,
            min_len: 10,
            feature_dims: Modality::ALL.iter().map(|&m| (m, 8)).collect(),
            latent_range: 1.2,
            noise_std: 0.05,
            label_range: (-3.0, 3.0),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn small(n_train: usize, n_valid: usize, n_test: usize) -> Self {
        SyntheticSpec {
            n_train,
            n_valid,
            n_test,
            ..SyntheticSpec::default()
        }
    }
}

/// Difficulty tag derived from the label magnitude.
pub fn difficulty(label: f64) -> InstanceType {
    match label.abs() {
        a if a >= 1.5 => InstanceType::Easy,
        a if a >= 0.5 => InstanceType::Common,
        _ => InstanceType::Difficult,
    }
}

/// Builds the dataset; also returns the per-sample latents (manifest
/// order).
pub fn synthetic_bundle_with_latents(spec: &SyntheticSpec) -> Result<(FeatureBundle, Vec<BTreeMap<Modality, f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions: BTreeMap<Modality, Vec<f64>> = spec
        .feature_dims
        .iter()
        .map(|(&m, &d)| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (m, v.into_iter().map(|x| x / norm).collect())
        })
        .collect();
    let n = spec.n_train + spec.n_valid + spec.n_test;
    let mut splits: Vec<Split> = std::iter::repeat_n(Split::Train, spec.n_train)
        .chain(std::iter::repeat_n(Split::Valid, spec.n_valid))
        .chain(std::iter::repeat_n(Split::Test, spec.n_test))
        .collect();
    splits.shuffle(&mut rng);

    let (lo, hi) = spec.label_range;
    let t = spec.seq_len;
    let mut samples = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut data: BTreeMap<Modality, (Vec<f32>, Vec<usize>)> = spec
        .feature_dims
        .iter()
        .map(|(&m, &d)| (m, (vec![0.0f32; n * t * d], Vec::with_capacity(n))))
        .collect();
    for (i, &split) in splits.iter().enumerate() {
        let mut z = BTreeMap::new();
        for (&m, &d) in &spec.feature_dims {
            let zm = rng.random_range(-spec.latent_range..=spec.latent_range);
            z.insert(m, zm);
            let len = rng.random_range(spec.min_len.max(1).min(t)..=t);
            let (buf, lengths) = data.get_mut(&m).expect("modality buffer");
            for f in 0..len {
                for k in 0..d {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    buf[(i * t + f) * d + k] = (zm * directions[&m][k] + spec.noise_std * noise) as f32;
                }
            }
            lengths.push(len);
        }
        let label = z.values().sum::<f64>().clamp(lo, hi);
        let mut meta = SampleMeta::new(format!("syn{i:04}"), split, label);
        for (&m, &zm) in &z {
            meta.set_unimodal_label(m, Some(zm.clamp(lo, hi)));
        }
        if split == Split::Test {
            meta.instance_type = Some(difficulty(label));
            meta.scenario = Some(Scenario::ALL[i % 3]);
        }
        samples.push(meta);
        latents.push(z);
    }
    let mut blocks = BTreeMap::new();
    for (&m, &d) in &spec.feature_dims {
        let (buf, lengths) = data.remove(&m).expect("modality buffer");
        blocks.insert(m, ModalityBlock::new(d, t, buf, lengths)?);
    }
    let bundle = FeatureBundle::new(
        Manifest {
            dataset_name: "synthetic".into(),
            label_range: spec.label_range,
            samples,
        },
        blocks,
    )?;
    Ok((bundle, latents))
}

pub fn synthetic_bundle(spec: &SyntheticSpec) -> Result<FeatureBundle> {
    synthetic_bundle_with_latents(spec).map(|(b, _)| b)
}
