//! Composite building blocks shared by the fusion models: dense layers, the
//! LSTM cell, scaled dot-product attention and outer-product fusion.

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Additive bias applied to masked attention scores.
pub const MASK_BIAS: f64 = -1e9;

/// Samples `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` entries.
pub fn uniform_init<F: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        F::from_f64_lossy(rng.random_range(-bound..bound))
    })
}

/// `y = x W + b` applied over the last axis.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            uniform_init([in_dim, out_dim], in_dim, rng),
        )?;
        let bias = params.add(format!("{name}.bias"), uniform_init([out_dim], in_dim, rng))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, bound[self.weight])?;
        tape.add(xw, bound[self.bias])
    }
}

/// Tape handles of one LSTM cell's weights. Gate columns are ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<F: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let h4 = 4 * hidden_dim;
        let w_ih = params.add(
            format!("{name}.w_ih"),
            uniform_init([input_dim, h4], hidden_dim, rng),
        )?;
        let w_hh = params.add(
            format!("{name}.w_hh"),
            uniform_init([hidden_dim, h4], hidden_dim, rng),
        )?;
        let bias = params.add(format!("{name}.bias"), uniform_init([h4], hidden_dim, rng))?;
        Ok(LstmCell {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    pub fn weights(&self, bound: &Bound) -> LstmWeights {
        LstmWeights {
            w_ih: bound[self.w_ih],
            w_hh: bound[self.w_hh],
            bias: bound[self.bias],
        }
    }
}

/// One LSTM step on `[B, d]` inputs and `[B, h]` states:
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c = f*c_prev + i*g`, `h = o*tanh(c)`.
pub fn lstm_cell_step<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let h4 = tape.shape(w.w_hh)[1];
    let hidden = h4 / 4;
    if tape.shape(h_prev).last() != Some(&hidden) || tape.shape(c_prev) != tape.shape(h_prev) {
        return Err(AutodiffError::shape(
            "lstm_cell_step",
            tape.shape(h_prev),
            &[hidden],
        ));
    }
    let xi = tape.matmul(x, w.w_ih)?;
    let hh = tape.matmul(h_prev, w.w_hh)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add(pre, w.bias)?;
    let axis = tape.shape(pre).len() - 1;
    let i = tape.slice(pre, axis, 0, hidden)?;
    let f = tape.slice(pre, axis, hidden, hidden)?;
    let g = tape.slice(pre, axis, 2 * hidden, hidden)?;
    let o = tape.slice(pre, axis, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// `softmax(Q K^T / sqrt(d) + bias) V`, where keys whose mask entry is false
/// receive [`MASK_BIAS`]. Accepts unbatched `[T, d]` or batched `[B, T, d]`
/// operands; the mask has one entry per key (per batch row when batched).
///
/// Returns the attended values and the attention weights.
pub fn attention_with_weights<F: Real>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    let rank = sq.len();
    let consistent = (rank == 2 || rank == 3)
        && sk.len() == rank
        && sv.len() == rank
        && sq[rank - 1] == sk[rank - 1]
        && sk[rank - 2] == sv[rank - 2]
        && (rank == 2 || (sq[0] == sk[0] && sk[0] == sv[0]));
    if !consistent {
        return Err(AutodiffError::shape("attention", &sq, &sk));
    }
    let d = sq[rank - 1];
    let tq = sq[rank - 2];
    let tk = sk[rank - 2];
    let batch = if rank == 3 { sq[0] } else { 1 };

    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, F::from_f64_lossy(1.0 / (d as f64).sqrt()));
    let scores = match key_mask {
        None => scores,
        Some(mask) => {
            if mask.len() != batch * tk {
                return Err(AutodiffError::shape("attention mask", &sk, &[mask.len()]));
            }
            let mut bias = Vec::with_capacity(batch * tq * tk);
            for b in 0..batch {
                let row = &mask[b * tk..(b + 1) * tk];
                if !row.iter().any(|&m| m) {
                    return Err(AutodiffError::AllMasked { row: b });
                }
                for _ in 0..tq {
                    bias.extend(row.iter().map(|&m| {
                        if m {
                            F::zero()
                        } else {
                            F::from_f64_lossy(MASK_BIAS)
                        }
                    }));
                }
            }
            let bias = tape.constant(Tensor::new(tape.shape(scores).to_vec(), bias)?);
            tape.add(scores, bias)?
        }
    };
    let weights = tape.softmax(scores, rank - 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

pub fn scaled_dot_attention<F: Real>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    attention_with_weights(tape, q, k, v, key_mask).map(|(out, _)| out)
}

/// Prepends a constant 1 to the last axis of a `[d]` or `[B, d]` operand.
pub fn augment_with_one<F: Real>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let ones_shape = match shape.as_slice() {
        [_] => vec![1],
        [b, _] => vec![*b, 1],
        _ => {
            return Err(AutodiffError::invalid(
                "augment_with_one",
                format!("expected rank 1 or 2, got {shape:?}"),
            ))
        }
    };
    let ones = tape.constant(Tensor::ones(ones_shape));
    tape.concat(&[ones, x], shape.len() - 1)
}

/// Flattened m-way outer product of the inputs, first input most
/// significant. With `augment`, every input is first extended with a leading
/// constant 1, which keeps all lower-order interaction terms in the result;
/// its length is then the product of `d_i + 1`.
pub fn outer_fusion<F: Real>(tape: &mut Tape<F>, inputs: &[Var], augment: bool) -> Result<Var> {
    if inputs.len() < 2 {
        return Err(AutodiffError::invalid(
            "outer_fusion",
            format!("needs at least two inputs, got {}", inputs.len()),
        ));
    }
    let mut parts = Vec::with_capacity(inputs.len());
    for &x in inputs {
        parts.push(if augment {
            augment_with_one(tape, x)?
        } else {
            x
        });
    }
    let mut acc = parts[0];
    for &next in &parts[1..] {
        acc = tape.outer(acc, next)?;
    }
    Ok(acc)
}
