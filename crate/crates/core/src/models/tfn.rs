use std::collections::BTreeMap;

use msa_autodiff::nn::outer_fusion;
use msa_autodiff::{ParamSet, Real};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Head, PooledEncoder};
use super::{fusion_order, Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::{Error, Result};

/// Tensor fusion: augmented outer product of the modality encodings in
/// audio, vision, text order.
#[derive(Clone, Debug)]
pub(crate) struct Tfn {
    encoders: BTreeMap<Modality, PooledEncoder>,
    order: Vec<Modality>,
    head: Head,
}

impl Tfn {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let order = fusion_order(&cfg.modalities());
        if order.len() < 2 {
            return Err(Error::Config("tfn needs at least two modalities".into()));
        }
        let mut encoders = BTreeMap::new();
        for &m in &order {
            let name = format!("tfn.{m}.encoder");
            let d = cfg.inputs[&m].feature_dim;
            encoders.insert(m, PooledEncoder::new(params, &name, d, cfg.hidden_dim(m)?, rng)?);
        }
        let fused: usize = order.iter().map(|m| encoders[m].out_dim() + 1).product();
        let head = Head::new(params, "tfn.head", fused, cfg.post_fusion_dim, rng)?;
        Ok(Tfn { encoders, order, head })
    }

    pub fn uni_dims(&self) -> BTreeMap<Modality, usize> {
        self.encoders.iter().map(|(&m, e)| (m, e.out_dim())).collect()
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let mut uni = BTreeMap::new();
        for &m in &self.order {
            uni.insert(m, self.encoders[&m].forward(cx, batch.input(m)?)?);
        }
        let zs: Vec<_> = self.order.iter().map(|m| uni[m]).collect();
        let fusion = outer_fusion(cx.tape, &zs, true)?;
        let pred = self.head.forward(cx, fusion)?;
        Ok(Forward::new(pred, fusion, uni))
    }
}
