//! Pieces shared by several architectures.

use msa_autodiff::nn::Linear;
use msa_autodiff::{Bound, ParamSet, Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::batch::ModalityInput;
use crate::error::Result;

pub(crate) struct Ctx<'a, F: Real> {
    pub tape: &'a mut Tape<F>,
    pub bound: &'a Bound,
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
    pub dropout: F,
}

impl<F: Real> Ctx<'_, F> {
    pub fn linear(&mut self, l: &Linear, x: Var) -> Result<Var> {
        Ok(l.forward(self.tape, self.bound, x)?)
    }

    pub fn linear_relu(&mut self, l: &Linear, x: Var) -> Result<Var> {
        let y = self.linear(l, x)?;
        Ok(self.tape.relu(y))
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        Ok(self.tape.dropout(x, self.dropout, self.train, self.rng)?)
    }

    /// Multiplies row `b` of a `[B, ...]` value by 0 where `keep[b]` is false.
    pub fn gate_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        if keep.iter().all(|&k| k) {
            return Ok(x);
        }
        let shape = self.tape.shape(x).to_vec();
        let per_row = shape[1..].iter().product::<usize>();
        let g = Tensor::from_fn(shape, |i| if keep[i / per_row] { F::one() } else { F::zero() });
        let g = self.tape.constant(g);
        Ok(self.tape.mul(x, g)?)
    }

    /// `prev + m * (next - prev)` with a per-row 0/1 mask: rows whose mask
    /// is false keep their previous state.
    pub fn masked_update(&mut self, prev: Var, next: Var, mask: &[bool]) -> Result<Var> {
        if mask.iter().all(|&m| m) {
            return Ok(next);
        }
        let delta = self.tape.sub(next, prev)?;
        let delta = self.gate_rows(delta, mask)?;
        Ok(self.tape.add(prev, delta)?)
    }

    pub fn zeros(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        self.tape.constant(Tensor::zeros(shape))
    }
}

/// Masked-mean time pooling followed by a two-layer relu MLP. Samples with
/// no valid frame produce the zero vector.
#[derive(Clone, Debug)]
pub(crate) struct PooledEncoder {
    pub l1: Linear,
    pub l2: Linear,
}

impl PooledEncoder {
    pub fn new<F: Real>(params: &mut ParamSet<F>, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(PooledEncoder {
            l1: Linear::new(params, &format!("{name}.l1"), in_dim, hidden, rng)?,
            l2: Linear::new(params, &format!("{name}.l2"), hidden, hidden, rng)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, input: &ModalityInput<F>) -> Result<Var> {
        let x = cx.tape.constant(input.data.clone());
        let pooled = cx.tape.masked_mean(x, &input.mask)?;
        let h = cx.linear_relu(&self.l1, pooled)?;
        let h = cx.linear_relu(&self.l2, h)?;
        cx.gate_rows(h, &input.presence())
    }
}

/// `fusion -> relu(Linear) -> dropout -> Linear -> [B]`.
#[derive(Clone, Debug)]
pub(crate) struct Head {
    pub l1: Linear,
    pub l2: Linear,
}

impl Head {
    pub fn new<F: Real>(params: &mut ParamSet<F>, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Head {
            l1: Linear::new(params, &format!("{name}.l1"), in_dim, hidden, rng)?,
            l2: Linear::new(params, &format!("{name}.l2"), hidden, 1, rng)?,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, fusion: Var) -> Result<Var> {
        let h = cx.linear_relu(&self.l1, fusion)?;
        let h = cx.dropout(h)?;
        let y = cx.linear(&self.l2, h)?;
        let b = cx.tape.shape(y)[0];
        Ok(cx.tape.reshape(y, [b])?)
    }
}

/// Frame `t` of every sample as a `[B, d]` tensor (zeros past the end), and
/// its validity per sample.
pub(crate) fn frame_at<F: Real>(input: &ModalityInput<F>, t: usize) -> (Tensor<F>, Vec<bool>) {
    let (b, len, d) = (input.batch_size(), input.seq_len(), input.feature_dim());
    if t >= len {
        return (Tensor::zeros([b, d]), vec![false; b]);
    }
    let src = input.data.data();
    let data = (0..b)
        .flat_map(|i| src[(i * len + t) * d..(i * len + t + 1) * d].iter().copied())
        .collect();
    let valid = (0..b).map(|i| input.valid(i, t)).collect();
    (Tensor::new([b, d], data).expect("frame shape"), valid)
}
