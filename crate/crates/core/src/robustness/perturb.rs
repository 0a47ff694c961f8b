use std::collections::BTreeMap;

use msa_autodiff::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{FeatureBundle, InstanceType, Modality, ModalityBlock};
use crate::error::{Error, Result};
use crate::models::{Batch, ModalityInput};

/// What a perturbation does to its target modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Additive Gaussian noise at a per-sample signal-to-noise ratio.
    FeatureNoise { snr_db: f64 },
    /// Features zeroed and the modality marked missing.
    ModalityMissing,
    /// Each valid frame replaced by the unknown-token vector with
    /// probability `rate` (text features).
    UnkSubstitution { rate: f64, unk: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    pub modality: Modality,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn noise(modality: Modality, snr_db: f64, seed: u64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::FeatureNoise { snr_db },
            modality,
            seed,
        }
    }

    pub fn missing(modality: Modality) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::ModalityMissing,
            modality,
            seed: 0,
        }
    }

    /// Instance type a perturbed copy of a clean sample belongs to.
    pub fn instance_type(&self) -> InstanceType {
        match self.kind {
            PerturbationKind::ModalityMissing => InstanceType::Missing,
            _ => InstanceType::Noise,
        }
    }

    /// Short tag used in derived sample ids.
    pub fn tag(&self) -> String {
        match &self.kind {
            PerturbationKind::FeatureNoise { snr_db } => format!("noise-{}-{snr_db}db", self.modality),
            PerturbationKind::ModalityMissing => format!("missing-{}", self.modality),
            PerturbationKind::UnkSubstitution { rate, .. } => format!("unk-{}-{rate}", self.modality),
        }
    }

    pub fn validate(&self, bundle: &FeatureBundle) -> Result<()> {
        let block = bundle
            .block(self.modality)
            .map_err(|_| Error::Validation(format!("bundle has no {} modality to perturb", self.modality)))?;
        match &self.kind {
            PerturbationKind::FeatureNoise { snr_db } if snr_db.is_nan() || *snr_db == f64::NEG_INFINITY => {
                Err(Error::Validation(format!("snr_db must be finite or +inf, got {snr_db}")))
            }
            PerturbationKind::ModalityMissing if bundle.blocks.len() < 2 => Err(Error::Validation(format!(
                "cannot drop {}: it is the only modality",
                self.modality
            ))),
            PerturbationKind::UnkSubstitution { rate, unk } => {
                if !(0.0..=1.0).contains(rate) {
                    Err(Error::Validation(format!("unk rate must lie in [0, 1], got {rate}")))
                } else if unk.len() != block.feature_dim {
                    Err(Error::Shape(format!(
                        "unk vector has {} dims, {} features have {}",
                        unk.len(),
                        self.modality,
                        block.feature_dim
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// Adds zero-mean Gaussian noise to every valid frame so that each sample's
/// `10 log10(signal power / noise power)` is `snr_db`. Padding stays zero;
/// `+inf` returns the block unchanged; all-zero samples are left as is.
pub fn add_feature_noise(block: &ModalityBlock, snr_db: f64, seed: u64) -> Result<ModalityBlock> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Validation(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let mut out = block.clone();
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let ratio = 10f64.powf(snr_db / 10.0);
    for i in 0..out.num_samples() {
        let cells = out.valid_frames_mut(i);
        let power = cells.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / cells.len() as f64;
        if power == 0.0 {
            log::warn!("sample {i} is all zeros; SNR undefined, left unchanged");
            continue;
        }
        let normal = Normal::new(0.0, (power / ratio).sqrt()).expect("finite std");
        let mut rng = sample_rng(seed, i);
        for v in cells.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    Ok(out)
}

/// Replaces valid frames by `unk` with probability `rate`.
pub fn substitute_unk_frames(block: &ModalityBlock, unk: &[f32], rate: f64, seed: u64) -> Result<ModalityBlock> {
    if unk.len() != block.feature_dim {
        return Err(Error::Shape(format!(
            "unk vector has {} dims, block has {}",
            unk.len(),
            block.feature_dim
        )));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Validation(format!("unk rate must lie in [0, 1], got {rate}")));
    }
    let d = block.feature_dim;
    let mut out = block.clone();
    for i in 0..out.num_samples() {
        let mut rng = sample_rng(seed, i);
        for frame in out.valid_frames_mut(i).chunks_mut(d) {
            if rng.random::<f64>() < rate {
                frame.copy_from_slice(unk);
            }
        }
    }
    Ok(out)
}

/// Token-level counterpart of [`substitute_unk_frames`] for raw transcripts.
pub fn substitute_unk_tokens<S: AsRef<str>>(tokens: &[S], rate: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tokens
        .iter()
        .map(|t| {
            if rng.random::<f64>() < rate {
                crate::extract::UNK_TOKEN.to_string()
            } else {
                t.as_ref().to_string()
            }
        })
        .collect()
}

/// Zeroes one modality of a batch and masks it out for every sample.
pub fn drop_modality<F: Real>(batch: &Batch<F>, modality: Modality) -> Result<Batch<F>> {
    let input = batch
        .inputs
        .get(&modality)
        .ok_or_else(|| Error::Validation(format!("batch has no {modality} input to drop")))?;
    if batch.inputs.len() < 2 {
        return Err(Error::Validation(format!("cannot drop {modality}: it is the only modality")));
    }
    let mut out = batch.clone();
    out.inputs.insert(
        modality,
        ModalityInput {
            data: msa_autodiff::Tensor::zeros(input.data.shape().to_vec()),
            mask: vec![false; input.mask.len()],
        },
    );
    Ok(out)
}

/// Applies `spec` to the samples at `indices` (all samples when `None`).
/// Labels and tags are left alone.
pub fn perturb_bundle(bundle: &FeatureBundle, spec: &PerturbationSpec, indices: Option<&[usize]>) -> Result<FeatureBundle> {
    spec.validate(bundle)?;
    let all: Vec<usize> = (0..bundle.len()).collect();
    let targets = indices.unwrap_or(&all);
    let mut out = bundle.clone();
    let m = spec.modality;
    let block = &bundle.blocks[&m];
    let changed = match &spec.kind {
        PerturbationKind::FeatureNoise { snr_db } => add_feature_noise(block, *snr_db, spec.seed)?,
        PerturbationKind::UnkSubstitution { rate, unk } => substitute_unk_frames(block, unk, *rate, spec.seed)?,
        PerturbationKind::ModalityMissing => {
            let mut b = block.clone();
            for &i in targets {
                b.sample_mut(i).fill(0.0);
            }
            b
        }
    };
    let dst = out.blocks.get_mut(&m).expect("validated modality");
    for &i in targets {
        if i >= bundle.len() {
            return Err(Error::Validation(format!("sample index {i} out of range")));
        }
        dst.sample_mut(i).copy_from_slice(changed.sample(i));
        if spec.kind == PerturbationKind::ModalityMissing {
            let missing = &mut out.manifest.samples[i].missing;
            if !missing.contains(&m) {
                missing.push(m);
                missing.sort();
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// The samples at `indices` followed by one perturbed, re-tagged copy of
/// them per spec (ids suffixed `#<tag>`).
pub fn synthesize_variants(bundle: &FeatureBundle, indices: &[usize], specs: &[PerturbationSpec]) -> Result<FeatureBundle> {
    let base = bundle.select(indices);
    let n = base.len();
    let mut samples = base.manifest.samples.clone();
    let mut blocks: BTreeMap<Modality, (Vec<f32>, Vec<usize>)> = base
        .blocks
        .iter()
        .map(|(&m, b)| (m, (b.data.clone(), b.lengths.clone())))
        .collect();
    for spec in specs {
        let variant = perturb_bundle(&base, spec, None)?;
        for (i, s) in variant.manifest.samples.iter().enumerate() {
            let mut s = s.clone();
            s.id = format!("{}#{}", base.manifest.samples[i].id, spec.tag());
            s.instance_type = Some(spec.instance_type());
            samples.push(s);
        }
        for (m, b) in &variant.blocks {
            let (data, lengths) = blocks.get_mut(m).expect("same modalities");
            data.extend_from_slice(&b.data);
            lengths.extend_from_slice(&b.lengths);
        }
    }
    debug_assert_eq!(samples.len(), n * (specs.len() + 1));
    let blocks = blocks
        .into_iter()
        .map(|(m, (data, lengths))| {
            let src = &base.blocks[&m];
            Ok((m, ModalityBlock::new(src.feature_dim, src.max_len, data, lengths)?))
        })
        .collect::<Result<_>>()?;
    let mut manifest = base.manifest.clone();
    manifest.samples = samples;
    FeatureBundle::new(manifest, blocks)
}
