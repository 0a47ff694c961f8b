use std::collections::BTreeMap;

use msa_autodiff::{Real, Tensor};

use crate::bundle::{FeatureBundle, Modality};
use crate::error::{Error, Result};

/// One modality of a padded batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityInput<F> {
    /// `[B, T, d]`.
    pub data: Tensor<F>,
    /// `B * T` frame mask.
    pub mask: Vec<bool>,
}

impl<F: Real> ModalityInput<F> {
    pub fn batch_size(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.data.shape()[2]
    }

    /// Whether sample `b` has at least one valid frame.
    pub fn present(&self, b: usize) -> bool {
        let t = self.seq_len();
        self.mask[b * t..(b + 1) * t].iter().any(|&m| m)
    }

    pub fn presence(&self) -> Vec<bool> {
        (0..self.batch_size()).map(|b| self.present(b)).collect()
    }

    pub fn valid(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.seq_len() + t]
    }
}

/// Padded multimodal inputs plus targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F> {
    pub ids: Vec<String>,
    pub inputs: BTreeMap<Modality, ModalityInput<F>>,
    pub labels: Vec<F>,
    /// Present only for modalities where every sample carries a label.
    pub uni_labels: BTreeMap<Modality, Vec<F>>,
}

impl<F: Real> Batch<F> {
    /// Gathers the samples at `indices`. Time is cut to the longest sample
    /// in the batch; modalities listed as missing are zeroed and masked.
    pub fn from_bundle(bundle: &FeatureBundle, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let samples = bundle.samples();
        let mut inputs = BTreeMap::new();
        for (&m, block) in &bundle.blocks {
            let d = block.feature_dim;
            let present: Vec<bool> = indices.iter().map(|&i| !samples[i].is_missing(m)).collect();
            let t = indices
                .iter()
                .zip(&present)
                .filter(|(_, &p)| p)
                .map(|(&i, _)| block.lengths[i])
                .max()
                .unwrap_or(1);
            let b = indices.len();
            let mut data = vec![F::zero(); b * t * d];
            let mut mask = vec![false; b * t];
            for (row, (&i, &p)) in indices.iter().zip(&present).enumerate() {
                if !p {
                    continue;
                }
                let len = block.lengths[i];
                for (k, &x) in block.valid_frames(i).iter().enumerate() {
                    data[row * t * d + k] = F::from_f64_lossy(x as f64);
                }
                mask[row * t..row * t + len].fill(true);
            }
            inputs.insert(
                m,
                ModalityInput {
                    data: Tensor::new([b, t, d], data)?,
                    mask,
                },
            );
        }
        let labels = indices
            .iter()
            .map(|&i| F::from_f64_lossy(samples[i].label_m))
            .collect();
        let mut uni_labels = BTreeMap::new();
        for &m in bundle.blocks.keys() {
            let vals: Option<Vec<F>> = indices
                .iter()
                .map(|&i| samples[i].unimodal_label(m).map(F::from_f64_lossy))
                .collect();
            if let Some(v) = vals {
                uni_labels.insert(m, v);
            }
        }
        Ok(Batch {
            ids: indices.iter().map(|&i| samples[i].id.clone()).collect(),
            inputs,
            labels,
            uni_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, m: Modality) -> Result<&ModalityInput<F>> {
        self.inputs
            .get(&m)
            .ok_or_else(|| Error::Shape(format!("batch has no {m} input")))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.inputs.keys().copied().collect()
    }

    pub fn cast<G: Real>(&self) -> Batch<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::from_f64_lossy(x.to_f64_lossy())).collect();
        Batch {
            ids: self.ids.clone(),
            inputs: self
                .inputs
                .iter()
                .map(|(&m, inp)| {
                    (
                        m,
                        ModalityInput {
                            data: inp.data.cast(),
                            mask: inp.mask.clone(),
                        },
                    )
                })
                .collect(),
            labels: conv(&self.labels),
            uni_labels: self.uni_labels.iter().map(|(&m, v)| (m, conv(v))).collect(),
        }
    }

    /// Reorders samples: row `r` of the result is row `order[r]` of `self`.
    pub fn permute(&self, order: &[usize]) -> Result<Batch<F>> {
        if order.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of length {} for a batch of {}",
                order.len(),
                self.len()
            )));
        }
        let pick = |v: &Vec<F>| order.iter().map(|&i| v[i]).collect::<Vec<F>>();
        let mut inputs = BTreeMap::new();
        for (&m, inp) in &self.inputs {
            let (t, d) = (inp.seq_len(), inp.feature_dim());
            let mut data = Vec::with_capacity(inp.data.numel());
            let mut mask = Vec::with_capacity(inp.mask.len());
            for &i in order {
                data.extend_from_slice(&inp.data.data()[i * t * d..(i + 1) * t * d]);
                mask.extend_from_slice(&inp.mask[i * t..(i + 1) * t]);
            }
            inputs.insert(
                m,
                ModalityInput {
                    data: Tensor::new([order.len(), t, d], data)?,
                    mask,
                },
            );
        }
        Ok(Batch {
            ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
            inputs,
            labels: pick(&self.labels),
            uni_labels: self.uni_labels.iter().map(|(&m, v)| (m, pick(v))).collect(),
        })
    }
}
