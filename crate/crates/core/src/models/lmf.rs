use std::collections::BTreeMap;

use msa_autodiff::nn::{augment_with_one, uniform_init, Linear};
use msa_autodiff::{ParamId, ParamSet, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, PooledEncoder};
use super::{fusion_order, Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::{Error, Result};

/// Low-rank fusion: per modality a `[h+1, out*rank]` factor (column
/// `o*rank + r` is rank component `r` of output `o`); the fused vector is
/// `sum_r w_r prod_m (z_m~ . f_m[:, o, r]) + b`.
#[derive(Clone, Debug)]
pub(crate) struct Lmf {
    encoders: BTreeMap<Modality, PooledEncoder>,
    order: Vec<Modality>,
    factors: BTreeMap<Modality, ParamId>,
    rank_weights: ParamId,
    fusion_bias: ParamId,
    rank: usize,
    out_dim: usize,
    head: Linear,
}

impl Lmf {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let order = fusion_order(&cfg.modalities());
        if order.len() < 2 {
            return Err(Error::Config("lmf needs at least two modalities".into()));
        }
        let (rank, out_dim) = (cfg.lmf_rank, cfg.post_fusion_dim);
        let mut encoders = BTreeMap::new();
        let mut factors = BTreeMap::new();
        for &m in &order {
            let h = cfg.hidden_dim(m)?;
            let d = cfg.inputs[&m].feature_dim;
            encoders.insert(m, PooledEncoder::new(params, &format!("lmf.{m}.encoder"), d, h, rng)?);
            let f = params.add(format!("lmf.{m}.factor"), uniform_init([h + 1, out_dim * rank], h + 1, rng))?;
            factors.insert(m, f);
        }
        let rank_weights = params.add("lmf.rank_weights", uniform_init([rank, 1], rank, rng))?;
        let fusion_bias = params.add("lmf.fusion_bias", Tensor::zeros([out_dim]))?;
        let head = Linear::new(params, "lmf.head", out_dim, 1, rng)?;
        Ok(Lmf {
            encoders,
            order,
            factors,
            rank_weights,
            fusion_bias,
            rank,
            out_dim,
            head,
        })
    }

    pub fn uni_dims(&self) -> BTreeMap<Modality, usize> {
        self.encoders.iter().map(|(&m, e)| (m, e.out_dim())).collect()
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let b = batch.len();
        let mut uni = BTreeMap::new();
        let mut product = None;
        for &m in &self.order {
            let z = self.encoders[&m].forward(cx, batch.input(m)?)?;
            uni.insert(m, z);
            let za = augment_with_one(cx.tape, z)?;
            let proj = cx.tape.matmul(za, cx.bound[self.factors[&m]])?;
            product = Some(match product {
                None => proj,
                Some(p) => cx.tape.mul(p, proj)?,
            });
        }
        let product = product.expect("at least two modalities");
        let per_rank = cx.tape.reshape(product, [b, self.out_dim, self.rank])?;
        let summed = cx.tape.matmul(per_rank, cx.bound[self.rank_weights])?;
        let summed = cx.tape.reshape(summed, [b, self.out_dim])?;
        let fusion = cx.tape.add(summed, cx.bound[self.fusion_bias])?;
        let h = cx.dropout(fusion)?;
        let y = cx.linear(&self.head, h)?;
        let pred = cx.tape.reshape(y, [b])?;
        Ok(Forward::new(pred, fusion, uni))
    }

    pub fn expand<F: Real>(&self, params: &ParamSet<F>) -> LmfExpansion<F> {
        let dims: Vec<usize> = self.order.iter().map(|m| params.value(self.factors[m]).shape()[0]).collect();
        let cells: usize = dims.iter().product();
        let (out, rank) = (self.out_dim, self.rank);
        let w = params.value(self.rank_weights).data();
        let mut weight = vec![F::zero(); cells * out];
        let mut idx = vec![0usize; dims.len()];
        for cell in 0..cells {
            let mut rem = cell;
            for k in (0..dims.len()).rev() {
                idx[k] = rem % dims[k];
                rem /= dims[k];
            }
            for o in 0..out {
                let mut acc = F::zero();
                for r in 0..rank {
                    let mut prod = w[r];
                    for (k, m) in self.order.iter().enumerate() {
                        prod = prod * params.value(self.factors[m]).data()[idx[k] * out * rank + o * rank + r];
                    }
                    acc = acc + prod;
                }
                weight[cell * out + o] = acc;
            }
        }
        LmfExpansion {
            order: self.order.clone(),
            dims,
            out_dim: out,
            weight,
            bias: params.value(self.fusion_bias).data().to_vec(),
        }
    }
}

/// The full fusion weight tensor that the low-rank factors represent.
#[derive(Clone, Debug, PartialEq)]
pub struct LmfExpansion<F> {
    /// Modalities along the leading axes.
    pub order: Vec<Modality>,
    /// Augmented encoding sizes `h_m + 1`.
    pub dims: Vec<usize>,
    pub out_dim: usize,
    /// Row-major over `dims..., out_dim`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> LmfExpansion<F> {
    pub fn shape(&self) -> Vec<usize> {
        let mut s = self.dims.clone();
        s.push(self.out_dim);
        s
    }

    /// Contracts one sample's (unaugmented) encodings, given in `order`,
    /// against the tensor and adds the bias.
    pub fn contract(&self, encodings: &[&[F]]) -> Result<Vec<F>> {
        if encodings.len() != self.dims.len()
            || encodings.iter().zip(&self.dims).any(|(e, &d)| e.len() + 1 != d)
        {
            return Err(Error::Shape(format!(
                "encodings of sizes {:?} do not match tensor dims {:?}",
                encodings.iter().map(|e| e.len()).collect::<Vec<_>>(),
                self.dims
            )));
        }
        let cells: usize = self.dims.iter().product();
        let mut out = self.bias.clone();
        for cell in 0..cells {
            let mut rem = cell;
            let mut coef = F::one();
            for k in (0..self.dims.len()).rev() {
                let i = rem % self.dims[k];
                rem /= self.dims[k];
                coef = coef * if i == 0 { F::one() } else { encodings[k][i - 1] };
            }
            for o in 0..self.out_dim {
                out[o] = out[o] + coef * self.weight[cell * self.out_dim + o];
            }
        }
        Ok(out)
    }
}
