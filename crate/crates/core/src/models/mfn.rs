use std::collections::BTreeMap;

use msa_autodiff::nn::{lstm_cell_step, Linear, LstmCell};
use msa_autodiff::{ParamSet, Real, Var};
use rand_chacha::ChaCha8Rng;

use super::layers::{frame_at, Ctx, Head};
use super::{Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::Result;

/// Memory fusion: per-modality LSTMs in lockstep, attention over the
/// concatenated previous/current cell states, and a gated multi-view memory.
#[derive(Clone, Debug)]
pub(crate) struct Mfn {
    cells: BTreeMap<Modality, LstmCell>,
    attn1: Linear,
    attn2: Linear,
    gamma1: Linear,
    gamma2: Linear,
    candidate: Linear,
    mem_dim: usize,
    head: Head,
}

impl Mfn {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut cells = BTreeMap::new();
        for (&m, d) in &cfg.inputs {
            let cell = LstmCell::new(params, &format!("mfn.{m}.lstm"), d.feature_dim, cfg.hidden_dim(m)?, rng)?;
            cells.insert(m, cell);
        }
        let total: usize = cells.values().map(|c| c.hidden_dim).sum();
        let mem = cfg.mfn_mem_dim;
        Ok(Mfn {
            attn1: Linear::new(params, "mfn.attn.l1", 2 * total, cfg.mfn_attn_hidden, rng)?,
            attn2: Linear::new(params, "mfn.attn.l2", cfg.mfn_attn_hidden, 2 * total, rng)?,
            gamma1: Linear::new(params, "mfn.gamma1", 2 * total + mem, mem, rng)?,
            gamma2: Linear::new(params, "mfn.gamma2", 2 * total + mem, mem, rng)?,
            candidate: Linear::new(params, "mfn.candidate", 2 * total, mem, rng)?,
            head: Head::new(params, "mfn.head", total + mem, cfg.post_fusion_dim, rng)?,
            cells,
            mem_dim: mem,
        })
    }

    pub fn uni_dims(&self) -> BTreeMap<Modality, usize> {
        self.cells.iter().map(|(&m, c)| (m, c.hidden_dim)).collect()
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let b = batch.len();
        let mut h: BTreeMap<Modality, Var> = BTreeMap::new();
        let mut c: BTreeMap<Modality, Var> = BTreeMap::new();
        for (&m, cell) in &self.cells {
            h.insert(m, cx.zeros([b, cell.hidden_dim]));
            c.insert(m, cx.zeros([b, cell.hidden_dim]));
        }
        let mut u = cx.zeros([b, self.mem_dim]);
        let steps = batch.inputs.values().map(|i| i.seq_len()).max().unwrap_or(0);
        for t in 0..steps {
            let mut any = vec![false; b];
            let mut frames = BTreeMap::new();
            for (&m, input) in &batch.inputs {
                let (x, valid) = frame_at(input, t);
                any.iter_mut().zip(&valid).for_each(|(a, &v)| *a |= v);
                frames.insert(m, (x, valid));
            }
            if !any.iter().any(|&v| v) {
                continue;
            }
            let c_prev: Vec<Var> = c.values().copied().collect();
            for (&m, cell) in &self.cells {
                let (x, valid) = frames.remove(&m).expect("input for every cell");
                if !valid.iter().any(|&v| v) {
                    continue;
                }
                let x = cx.tape.constant(x);
                let w = cell.weights(cx.bound);
                let (h_new, c_new) = lstm_cell_step(cx.tape, x, h[&m], c[&m], &w)?;
                let hm = cx.masked_update(h[&m], h_new, &valid)?;
                let cm = cx.masked_update(c[&m], c_new, &valid)?;
                h.insert(m, hm);
                c.insert(m, cm);
            }
            let mut views = c_prev;
            views.extend(c.values().copied());
            let cstar = cx.tape.concat(&views, 1)?;
            let a = cx.linear_relu(&self.attn1, cstar)?;
            let a = cx.linear(&self.attn2, a)?;
            let a = cx.tape.softmax(a, 1)?;
            let attended = cx.tape.mul(a, cstar)?;
            let joint = cx.tape.concat(&[attended, u], 1)?;
            let g1 = cx.linear(&self.gamma1, joint)?;
            let g1 = cx.tape.sigmoid(g1);
            let g2 = cx.linear(&self.gamma2, joint)?;
            let g2 = cx.tape.sigmoid(g2);
            let cand = cx.linear(&self.candidate, attended)?;
            let cand = cx.tape.tanh(cand);
            let keep = cx.tape.mul(g1, u)?;
            let write = cx.tape.mul(g2, cand)?;
            let u_new = cx.tape.add(keep, write)?;
            u = cx.masked_update(u, u_new, &any)?;
        }
        let mut parts: Vec<Var> = h.values().copied().collect();
        parts.push(u);
        let fusion = cx.tape.concat(&parts, 1)?;
        let pred = self.head.forward(cx, fusion)?;
        Ok(Forward::new(pred, fusion, h))
    }
}
