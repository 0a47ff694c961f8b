use std::collections::BTreeMap;

use msa_autodiff::{ParamSet, Real};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Head, PooledEncoder};
use super::{Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::Result;

/// Late fusion: independent pooled encoders, concatenated.
#[derive(Clone, Debug)]
pub(crate) struct LfDnn {
    encoders: BTreeMap<Modality, PooledEncoder>,
    head: Head,
}

impl LfDnn {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut encoders = BTreeMap::new();
        for (&m, dims) in &cfg.inputs {
            let name = format!("lf_dnn.{m}.encoder");
            encoders.insert(m, PooledEncoder::new(params, &name, dims.feature_dim, cfg.hidden_dim(m)?, rng)?);
        }
        let fused: usize = encoders.values().map(PooledEncoder::out_dim).sum();
        let head = Head::new(params, "lf_dnn.head", fused, cfg.post_fusion_dim, rng)?;
        Ok(LfDnn { encoders, head })
    }

    pub fn uni_dims(&self) -> BTreeMap<Modality, usize> {
        self.encoders.iter().map(|(&m, e)| (m, e.out_dim())).collect()
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let mut uni = BTreeMap::new();
        for (&m, enc) in &self.encoders {
            uni.insert(m, enc.forward(cx, batch.input(m)?)?);
        }
        let parts: Vec<_> = uni.values().copied().collect();
        let fusion = cx.tape.concat(&parts, 1)?;
        let pred = self.head.forward(cx, fusion)?;
        Ok(Forward::new(pred, fusion, uni))
    }
}
