//! Dataset container: a manifest of labelled samples plus one padded feature
//! block per modality.

mod io;
mod types;
mod view;

pub use io::{read_bundle, write_bundle, MANIFEST_FILE};
pub use types::{InstanceType, Modality, Scenario, Split};
pub use view::{pad_and_mask, split_view, PaddedBlock};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub split: Split,
    pub label_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_type: Option<InstanceType>,
    /// Modalities whose features were removed (zeroed and fully masked).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<Modality>,
}

impl SampleMeta {
    pub fn new(id: impl Into<String>, split: Split, label_m: f64) -> Self {
        SampleMeta {
            id: id.into(),
            split,
            label_m,
            label_t: None,
            label_a: None,
            label_v: None,
            scenario: None,
            instance_type: None,
            missing: Vec::new(),
        }
    }

    pub fn unimodal_label(&self, m: Modality) -> Option<f64> {
        match m {
            Modality::Text => self.label_t,
            Modality::Audio => self.label_a,
            Modality::Vision => self.label_v,
        }
    }

    pub fn set_unimodal_label(&mut self, m: Modality, value: Option<f64>) {
        match m {
            Modality::Text => self.label_t = value,
            Modality::Audio => self.label_a = value,
            Modality::Vision => self.label_v = value,
        }
    }

    pub fn is_missing(&self, m: Modality) -> bool {
        self.missing.contains(&m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dataset_name: String,
    pub label_range: (f64, f64),
    pub samples: Vec<SampleMeta>,
}

/// Padded `N x T x d` float32 features for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBlock {
    pub feature_dim: usize,
    pub max_len: usize,
    pub data: Vec<f32>,
    pub lengths: Vec<usize>,
}

impl ModalityBlock {
    /// Checks only the array shape; cell-level invariants are checked by
    /// [`FeatureBundle::validate`].
    pub fn new(feature_dim: usize, max_len: usize, data: Vec<f32>, lengths: Vec<usize>) -> Result<Self> {
        if feature_dim == 0 || max_len == 0 {
            return Err(Error::Shape(format!(
                "block dims must be positive (feature_dim {feature_dim}, max_len {max_len})"
            )));
        }
        if data.len() != lengths.len() * max_len * feature_dim {
            return Err(Error::Shape(format!(
                "block data has {} values, expected {} x {} x {} = {}",
                data.len(),
                lengths.len(),
                max_len,
                feature_dim,
                lengths.len() * max_len * feature_dim
            )));
        }
        Ok(ModalityBlock {
            feature_dim,
            max_len,
            data,
            lengths,
        })
    }

    /// Pads `(frames, row-major frames x d values)` sequences to a common
    /// length; `max_len` defaults to the longest sequence.
    pub fn from_sequences(feature_dim: usize, max_len: Option<usize>, seqs: &[(usize, Vec<f32>)]) -> Result<Self> {
        let longest = seqs.iter().map(|(t, _)| *t).max().unwrap_or(0);
        let max_len = max_len.unwrap_or(longest);
        if longest > max_len {
            return Err(Error::Shape(format!(
                "sequence of length {longest} exceeds max_len {max_len}"
            )));
        }
        let mut data = vec![0.0f32; seqs.len() * max_len * feature_dim];
        let mut lengths = Vec::with_capacity(seqs.len());
        for (i, (t, values)) in seqs.iter().enumerate() {
            if values.len() != t * feature_dim {
                return Err(Error::Shape(format!(
                    "sequence {i} has {} values, expected {t} x {feature_dim}",
                    values.len()
                )));
            }
            let start = i * max_len * feature_dim;
            data[start..start + values.len()].copy_from_slice(values);
            lengths.push(*t);
        }
        ModalityBlock::new(feature_dim, max_len, data, lengths)
    }

    pub fn num_samples(&self) -> usize {
        self.lengths.len()
    }

    fn stride(&self) -> usize {
        self.max_len * self.feature_dim
    }

    /// All `max_len x d` values of sample `i`, padding included.
    pub fn sample(&self, i: usize) -> &[f32] {
        &self.data[i * self.stride()..(i + 1) * self.stride()]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// The unpadded `length x d` frames of sample `i`.
    pub fn valid_frames(&self, i: usize) -> &[f32] {
        &self.sample(i)[..self.lengths[i] * self.feature_dim]
    }

    pub fn valid_frames_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.lengths[i] * self.feature_dim;
        &mut self.sample_mut(i)[..n]
    }

    /// Keeps the listed samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> ModalityBlock {
        let mut data = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        ModalityBlock {
            feature_dim: self.feature_dim,
            max_len: self.max_len,
            data,
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
        }
    }

    fn check_cells(&self, modality: Modality, samples: &[SampleMeta]) -> Result<()> {
        let d = self.feature_dim;
        for (i, meta) in samples.iter().enumerate() {
            let len = self.lengths[i];
            if len == 0 || len > self.max_len {
                return Err(Error::Validation(format!(
                    "sample '{}': {modality} length {len} outside [1, {}]",
                    meta.id, self.max_len
                )));
            }
            for (k, &x) in self.sample(i).iter().enumerate() {
                let (frame, dim) = (k / d, k % d);
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        sample: meta.id.clone(),
                        modality,
                        frame,
                        dim,
                    });
                }
                if frame >= len && x != 0.0 {
                    return Err(Error::Validation(format!(
                        "sample '{}': {modality} padding at frame {frame}, dim {dim} is {x}, expected 0",
                        meta.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A whole dataset: manifest plus one block per modality, rows in manifest
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub manifest: Manifest,
    pub blocks: BTreeMap<Modality, ModalityBlock>,
}

impl FeatureBundle {
    pub fn new(manifest: Manifest, blocks: BTreeMap<Modality, ModalityBlock>) -> Result<Self> {
        let b = FeatureBundle { manifest, blocks };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn samples(&self) -> &[SampleMeta] {
        &self.manifest.samples
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.blocks.keys().copied().collect()
    }

    pub fn block(&self, m: Modality) -> Result<&ModalityBlock> {
        self.blocks
            .get(&m)
            .ok_or_else(|| Error::Validation(format!("bundle has no {m} modality")))
    }

    pub fn has_unimodal_labels(&self) -> bool {
        self.manifest.samples.iter().all(|s| {
            self.blocks
                .keys()
                .all(|&m| s.unimodal_label(m).is_some())
        })
    }

    /// Samples at `indices`, in that order, without re-validation.
    pub fn select(&self, indices: &[usize]) -> FeatureBundle {
        FeatureBundle {
            manifest: Manifest {
                dataset_name: self.manifest.dataset_name.clone(),
                label_range: self.manifest.label_range,
                samples: indices.iter().map(|&i| self.manifest.samples[i].clone()).collect(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|(&m, b)| (m, b.select(indices)))
                .collect(),
        }
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks every container invariant, reporting the first offending
    /// sample or field.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Validation("bundle has no modalities".into()));
        }
        let (lo, hi) = self.manifest.label_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!(
                "label_range ({lo}, {hi}) must satisfy lo < hi"
            )));
        }
        let n = self.manifest.samples.len();
        for (&m, b) in &self.blocks {
            if b.feature_dim == 0 || b.max_len == 0 {
                return Err(Error::Validation(format!("{m} block has a zero dimension")));
            }
            if b.num_samples() != n {
                return Err(Error::Shape(format!(
                    "{m} block holds {} samples but the manifest lists {n}",
                    b.num_samples()
                )));
            }
            if b.data.len() != n * b.max_len * b.feature_dim {
                return Err(Error::Shape(format!(
                    "{m} block has {} values, expected {n} x {} x {}",
                    b.data.len(),
                    b.max_len,
                    b.feature_dim
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for s in &self.manifest.samples {
            if s.id.is_empty() {
                return Err(Error::Validation("sample with empty id".into()));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id '{}'", s.id)));
            }
            let in_range = |v: f64| v.is_finite() && v >= lo && v <= hi;
            if !in_range(s.label_m) {
                return Err(Error::Validation(format!(
                    "sample '{}': label_m {} outside label range [{lo}, {hi}]",
                    s.id, s.label_m
                )));
            }
            for m in Modality::ALL {
                if let Some(v) = s.unimodal_label(m) {
                    if !in_range(v) {
                        return Err(Error::Validation(format!(
                            "sample '{}': label_{} {v} outside label range [{lo}, {hi}]",
                            s.id,
                            m.short()
                        )));
                    }
                }
            }
            for m in &s.missing {
                if !self.blocks.contains_key(m) {
                    return Err(Error::Validation(format!(
                        "sample '{}': missing modality {m} is not in the bundle",
                        s.id
                    )));
                }
            }
        }
        for (&m, b) in &self.blocks {
            b.check_cells(m, &self.manifest.samples)?;
        }
        Ok(())
    }
}
