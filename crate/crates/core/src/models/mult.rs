use std::collections::BTreeMap;

use msa_autodiff::nn::{scaled_dot_attention, Linear};
use msa_autodiff::{ParamSet, Real};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Head};
use super::{Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct CrossBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ff1: Linear,
    ff2: Linear,
}

/// Stack of cross-modal attention blocks translating `source` into the
/// time axis of `target`.
#[derive(Clone, Debug)]
struct Translation {
    source: Modality,
    target: Modality,
    blocks: Vec<CrossBlock>,
}

/// Lightweight cross-modal transformer: one translation stream per ordered
/// modality pair, residual attention and feed-forward without layer norm,
/// masked-mean pooled over the target frames.
#[derive(Clone, Debug)]
pub(crate) struct Mult {
    proj: BTreeMap<Modality, Linear>,
    streams: Vec<Translation>,
    heads: usize,
    head: Head,
}

impl Mult {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mods = cfg.modalities();
        if mods.len() < 2 {
            return Err(Error::Config("mult needs at least two modalities".into()));
        }
        let dim = cfg.attn_dim;
        let mut proj = BTreeMap::new();
        for &m in &mods {
            let d = cfg.inputs[&m].feature_dim;
            proj.insert(m, Linear::new(params, &format!("mult.{m}.proj"), d, dim, rng)?);
        }
        let mut streams = Vec::new();
        for &target in &mods {
            for &source in &mods {
                if source == target {
                    continue;
                }
                let mut blocks = Vec::new();
                for l in 0..cfg.attn_layers {
                    let p = format!("mult.{}2{}.block{l}", source.short(), target.short());
                    let mut lin = |n: &str| Linear::new(params, &format!("{p}.{n}"), dim, dim, rng);
                    blocks.push(CrossBlock {
                        q: lin("q")?,
                        k: lin("k")?,
                        v: lin("v")?,
                        out: lin("out")?,
                        ff1: lin("ff1")?,
                        ff2: lin("ff2")?,
                    });
                }
                streams.push(Translation { source, target, blocks });
            }
        }
        let head = Head::new(params, "mult.head", streams.len() * dim, cfg.post_fusion_dim, rng)?;
        Ok(Mult {
            proj,
            streams,
            heads: cfg.attn_heads,
            head,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let mut projected = BTreeMap::new();
        for (&m, lin) in &self.proj {
            let x = cx.tape.constant(batch.input(m)?.data.clone());
            projected.insert(m, cx.linear(lin, x)?);
        }
        let mut pooled = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let src = batch.input(s.source)?;
            let tgt = batch.input(s.target)?;
            let present = src.presence();
            // Samples without any source frame attend over zeros and have
            // the result discarded, keeping softmax well defined.
            let t_src = src.seq_len();
            let mut key_mask = src.mask.clone();
            for (b, &p) in present.iter().enumerate() {
                if !p {
                    key_mask[b * t_src..(b + 1) * t_src].fill(true);
                }
            }
            let source = projected[&s.source];
            let mut z = projected[&s.target];
            for block in &s.blocks {
                let q = cx.linear(&block.q, z)?;
                let k = cx.linear(&block.k, source)?;
                let v = cx.linear(&block.v, source)?;
                let dim = cx.tape.shape(q)[2];
                let dh = dim / self.heads;
                let mut outs = Vec::with_capacity(self.heads);
                for h in 0..self.heads {
                    let qh = cx.tape.slice(q, 2, h * dh, dh)?;
                    let kh = cx.tape.slice(k, 2, h * dh, dh)?;
                    let vh = cx.tape.slice(v, 2, h * dh, dh)?;
                    outs.push(scaled_dot_attention(cx.tape, qh, kh, vh, Some(&key_mask))?);
                }
                let att = cx.tape.concat(&outs, 2)?;
                let att = cx.linear(&block.out, att)?;
                let att = cx.gate_rows(att, &present)?;
                z = cx.tape.add(z, att)?;
                let ff = cx.linear_relu(&block.ff1, z)?;
                let ff = cx.linear(&block.ff2, ff)?;
                z = cx.tape.add(z, ff)?;
            }
            pooled.push(cx.tape.masked_mean(z, &tgt.mask)?);
        }
        let fusion = cx.tape.concat(&pooled, 1)?;
        let pred = self.head.forward(cx, fusion)?;
        Ok(Forward::new(pred, fusion, BTreeMap::new()))
    }
}
