use std::collections::BTreeMap;

use msa_autodiff::nn::Linear;
use msa_autodiff::{ParamSet, Real, Var};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Head};
use super::{Batch, Forward, ModelConfig};
use crate::bundle::Modality;
use crate::error::Result;

/// Shared/private subspace model. Each pooled modality encoding `u` is
/// projected into a space shared across modalities (`sigmoid`, common
/// weights) and a private one (`tanh`, per modality); a decoder rebuilds
/// the pooled input from their sum.
#[derive(Clone, Debug)]
pub(crate) struct Misa {
    encoders: BTreeMap<Modality, Linear>,
    shared: Linear,
    private: BTreeMap<Modality, Linear>,
    decoders: BTreeMap<Modality, Linear>,
    head: Head,
    weights: (f64, f64, f64),
}

impl Misa {
    pub fn new<F: Real>(params: &mut ParamSet<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let hid = cfg.misa_hidden;
        let mut encoders = BTreeMap::new();
        let mut private = BTreeMap::new();
        let mut decoders = BTreeMap::new();
        for (&m, d) in &cfg.inputs {
            encoders.insert(m, Linear::new(params, &format!("misa.{m}.encoder"), d.feature_dim, hid, rng)?);
        }
        let shared = Linear::new(params, "misa.shared", hid, hid, rng)?;
        for (&m, d) in &cfg.inputs {
            private.insert(m, Linear::new(params, &format!("misa.{m}.private"), hid, hid, rng)?);
            decoders.insert(m, Linear::new(params, &format!("misa.{m}.decoder"), hid, d.feature_dim, rng)?);
        }
        let head = Head::new(params, "misa.head", 2 * cfg.inputs.len() * hid, cfg.post_fusion_dim, rng)?;
        Ok(Misa {
            encoders,
            shared,
            private,
            decoders,
            head,
            weights: (cfg.lambda_sim, cfg.lambda_orth, cfg.lambda_recon),
        })
    }

    pub fn uni_dims(&self) -> BTreeMap<Modality, usize> {
        self.encoders.iter().map(|(&m, e)| (m, e.out_dim)).collect()
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &Batch<F>) -> Result<Forward> {
        let b = batch.len();
        let inv_b = F::one() / F::from_usize(b).unwrap();
        let mut uni = BTreeMap::new();
        let mut shared = Vec::new();
        let mut private = Vec::new();
        let mut recon = Vec::new();
        let mut orth = Vec::new();
        for (&m, enc) in &self.encoders {
            let input = batch.input(m)?;
            let x = cx.tape.constant(input.data.clone());
            let pooled = cx.tape.masked_mean(x, &input.mask)?;
            let u = cx.linear_relu(enc, pooled)?;
            let u = cx.gate_rows(u, &input.presence())?;
            let s = cx.linear(&self.shared, u)?;
            let s = cx.tape.sigmoid(s);
            let p = cx.linear(&self.private[&m], u)?;
            let p = cx.tape.tanh(p);
            let sum = cx.tape.add(s, p)?;
            let r = cx.linear(&self.decoders[&m], sum)?;
            recon.push(cx.tape.mse_loss(r, pooled)?);
            // ||S^T P||_F^2 / B^2
            let st = cx.tape.transpose(s)?;
            let cross = cx.tape.matmul(st, p)?;
            let sq = cx.tape.mul(cross, cross)?;
            let total = cx.tape.sum(sq);
            orth.push(cx.tape.scale(total, inv_b * inv_b));
            uni.insert(m, u);
            shared.push(s);
            private.push(p);
        }
        let mut pair_terms = Vec::new();
        for i in 0..shared.len() {
            for j in i + 1..shared.len() {
                let d = cx.tape.sub(shared[i], shared[j])?;
                let sq = cx.tape.mul(d, d)?;
                let total = cx.tape.sum(sq);
                pair_terms.push(cx.tape.scale(total, inv_b));
            }
        }
        let sim = mean_of(cx, &pair_terms)?;
        let orth = sum_of(cx, &orth)?;
        let recon = mean_of(cx, &recon)?;

        let mut parts = shared;
        parts.extend(private);
        let fusion = cx.tape.concat(&parts, 1)?;
        let pred = self.head.forward(cx, fusion)?;

        let (ws, wo, wr) = self.weights;
        let a = cx.tape.scale(sim, F::from_f64_lossy(ws));
        let o = cx.tape.scale(orth, F::from_f64_lossy(wo));
        let r = cx.tape.scale(recon, F::from_f64_lossy(wr));
        let ao = cx.tape.add(a, o)?;
        let aux = cx.tape.add(ao, r)?;
        let mut fwd = Forward::new(pred, fusion, uni);
        fwd.aux_loss = Some(aux);
        fwd.aux_terms = vec![("similarity", sim), ("orthogonality", orth), ("reconstruction", recon)];
        Ok(fwd)
    }
}

fn sum_of<F: Real>(cx: &mut Ctx<'_, F>, terms: &[Var]) -> Result<Var> {
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => return Ok(cx.zeros(Vec::<usize>::new())),
    };
    for &t in &terms[1..] {
        acc = cx.tape.add(acc, t)?;
    }
    Ok(acc)
}

fn mean_of<F: Real>(cx: &mut Ctx<'_, F>, terms: &[Var]) -> Result<Var> {
    let s = sum_of(cx, terms)?;
    if terms.len() > 1 {
        Ok(cx.tape.scale(s, F::one() / F::from_usize(terms.len()).unwrap()))
    } else {
        Ok(s)
    }
}
