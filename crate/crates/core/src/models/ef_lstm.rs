use msa_autodiff::nn::{lstm_cell_step, LstmCell};
use msa_autodiff::{ParamSet, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::{frame_at, Ctx, Head};
use super::{Batch, Forward, ModelConfig};
use crate::error::Result;
use std::collections::BTreeMap;

/// Early fusion: per-frame concatenation of all modalities (shorter
/// sequences zero-padded) fed to one LSTM; the state stops updating once no
/// modality has a valid frame, so the final state is the last valid one.
#[derive(Clone, Debug)]
pub(crate) struct EfLstm {
    cell: LstmCell,
    head: Head,
}

impl EfLstm {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input: usize = cfg.inputs.values().map(|d| d.feature_dim).sum();
        let cell = LstmCell::new(params, "ef_lstm.lstm", input, cfg.ef_lstm_hidden, rng)?;
        let head = Head::new(params, "ef_lstm.head", cfg.ef_lstm_hidden, cfg.post_fusion_dim, rng)?;
        Ok(EfLstm { cell, head })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let b = batch.len();
        let steps = batch.inputs.values().map(|i| i.seq_len()).max().unwrap_or(0);
        let w = self.cell.weights(cx.bound);
        let mut h = cx.zeros([b, self.cell.hidden_dim]);
        let mut c = cx.zeros([b, self.cell.hidden_dim]);
        for t in 0..steps {
            let mut frames = Vec::new();
            let mut any = vec![false; b];
            for input in batch.inputs.values() {
                let (x, valid) = frame_at(input, t);
                frames.push(x);
                any.iter_mut().zip(&valid).for_each(|(a, &v)| *a |= v);
            }
            if !any.iter().any(|&v| v) {
                continue;
            }
            let x = concat_rows(&frames);
            let x = cx.tape.constant(x);
            let (h_new, c_new) = lstm_cell_step(cx.tape, x, h, c, &w)?;
            h = cx.masked_update(h, h_new, &any)?;
            c = cx.masked_update(c, c_new, &any)?;
        }
        let pred = self.head.forward(cx, h)?;
        Ok(Forward::new(pred, h, BTreeMap::new()))
    }
}

/// Concatenates `[B, d_i]` tensors along the feature axis.
fn concat_rows<F: Real>(parts: &[Tensor<F>]) -> Tensor<F> {
    let b = parts[0].shape()[0];
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut data = Vec::with_capacity(b * total);
    for i in 0..b {
        for p in parts {
            let d = p.shape()[1];
            data.extend_from_slice(&p.data()[i * d..(i + 1) * d]);
        }
    }
    Tensor::new([b, total], data).expect("concat shape")
}
