use super::{FeatureBundle, ModalityBlock, Split};
use crate::error::{Error, Result};

/// A block re-padded to a fixed length, with its frame mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBlock {
    pub target_len: usize,
    pub feature_dim: usize,
    /// `N x target_len x d`.
    pub data: Vec<f32>,
    /// `N x target_len`; true for real frames.
    pub mask: Vec<bool>,
    /// Lengths after any truncation.
    pub lengths: Vec<usize>,
}

impl PaddedBlock {
    pub fn into_block(self) -> Result<ModalityBlock> {
        ModalityBlock::new(self.feature_dim, self.target_len, self.data, self.lengths)
    }
}

/// Pads (or, with `truncate`, cuts) every sample to `target_len` frames.
pub fn pad_and_mask(block: &ModalityBlock, target_len: usize, truncate: bool) -> Result<PaddedBlock> {
    if target_len == 0 {
        return Err(Error::Validation("target_len must be positive".into()));
    }
    let d = block.feature_dim;
    let n = block.num_samples();
    if !truncate {
        if let Some((i, &len)) = block.lengths.iter().enumerate().find(|(_, &l)| l > target_len) {
            return Err(Error::Validation(format!(
                "sample {i} has length {len} > target_len {target_len} and truncation is disabled"
            )));
        }
    }
    let mut data = vec![0.0f32; n * target_len * d];
    let mut mask = vec![false; n * target_len];
    let mut lengths = Vec::with_capacity(n);
    for i in 0..n {
        let len = block.lengths[i].min(target_len);
        let src = &block.sample(i)[..len * d];
        data[i * target_len * d..i * target_len * d + len * d].copy_from_slice(src);
        mask[i * target_len..i * target_len + len].fill(true);
        lengths.push(len);
    }
    Ok(PaddedBlock {
        target_len,
        feature_dim: d,
        data,
        mask,
        lengths,
    })
}

/// Samples tagged with `split`, in manifest order.
pub fn split_view(bundle: &FeatureBundle, split: Split) -> Result<FeatureBundle> {
    let idx = bundle.indices_of(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    Ok(bundle.select(&idx))
}
