use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{Bound, ParamSet};
use crate::real::Real;
use crate::tensor::{axis_extents, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    Dropout { input: Var, mask: Vec<F> },
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    MeanAxis { input: Var, axis: usize },
    MaskedMean { input: Var, mask: Vec<bool> },
    L1 { pred: Var, target: Var },
    Mse { pred: Var, target: Var },
    Outer(Var, Var),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    param: Option<usize>,
}

/// Ordered record of primitive applications. Nodes are appended in
/// evaluation order, so the record order is a topological order.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    record: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let suffix = |long: &[usize], short: &[usize]| {
        short.len() <= long.len() && long[long.len() - short.len()..] == *short
    };
    if suffix(a, b) {
        Ok(a.to_vec())
    } else if suffix(b, a) {
        Ok(b.to_vec())
    } else {
        Err(AutodiffError::shape(op, a, b))
    }
}

/// out[m,n] += a[m,k] * b[k,n]
fn gemm<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[m,k] += g[m,n] * b[k,n]^T
fn gemm_bt<F: Real>(g: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: F = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            out[i * k + p] = out[i * k + p] + dot;
        }
    }
}

/// out[k,n] += a[m,k]^T * g[m,n]
fn gemm_at<F: Real>(a: &[F], g: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

fn transpose_last2<F: Real>(data: &[F], shape: &[usize]) -> (Vec<F>, Vec<usize>) {
    let r = shape.len();
    let (m, n) = (shape[r - 2], shape[r - 1]);
    let batch = data.len() / (m * n);
    let mut out = vec![F::zero(); data.len()];
    for b in 0..batch {
        let src = &data[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.swap(r - 2, r - 1);
    (out, new_shape)
}

enum MatMulMode {
    /// [..., m, k] x [k, n]
    Shared { rows: usize, k: usize, n: usize },
    /// [B, m, k] x [B, k, n]
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

fn matmul_mode(sa: &[usize], sb: &[usize]) -> Result<(MatMulMode, Vec<usize>)> {
    if sa.len() >= 2 && sb.len() == 2 {
        let k = sa[sa.len() - 1];
        if sb[0] != k {
            return Err(AutodiffError::shape("matmul", sa, sb));
        }
        let rows = sa.iter().product::<usize>() / k;
        let mut out = sa[..sa.len() - 1].to_vec();
        out.push(sb[1]);
        Ok((MatMulMode::Shared { rows, k, n: sb[1] }, out))
    } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
        Ok((
            MatMulMode::Batched {
                batch: sa[0],
                m: sa[1],
                k: sa[2],
                n: sb[2],
            },
            vec![sa[0], sa[1], sb[2]],
        ))
    } else {
        Err(AutodiffError::shape("matmul", sa, sb))
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl<F: Real> Tape<F> {
    /// A tape that records adjoint information.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape that only evaluates values; [`Tape::backward`] fails on it.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records one leaf per parameter. Gradients reaching these leaves are
    /// written to the parameter's slot by [`Tape::backward`].
    pub fn bind(&mut self, params: &ParamSet<F>) -> Bound {
        let vars = params
            .ids()
            .map(|id| {
                let v = self.push(params.value(id).clone(), Op::Leaf);
                self.nodes[v.0].param = Some(id.index());
                v
            })
            .collect();
        Bound(vars)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<(Tensor<F>, Var, Var)> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let (da, db) = (self.data(a), self.data(b));
        let (la, lb) = (da.len(), db.len());
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(da[i % la], db[i % lb])).collect();
        Ok((Tensor::new(shape, data)?, a, b))
    }

    /// Elementwise sum. Either operand may broadcast if its shape is a
    /// suffix of the other's.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a, b) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a, b) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a, b) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    /// `[..., m, k] x [k, n] -> [..., m, n]` or the batched
    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mode, shape) = matmul_mode(self.shape(a), self.shape(b))?;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![F::zero(); shape.iter().product()];
        match mode {
            MatMulMode::Shared { rows, k, n } => gemm(da, db, &mut out, rows, k, n),
            MatMulMode::Batched { batch, m, k, n } => {
                for i in 0..batch {
                    gemm(
                        &da[i * m * k..(i + 1) * m * k],
                        &db[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() < 2 {
            return Err(AutodiffError::invalid(
                "transpose",
                format!("needs rank >= 2, got {shape:?}"),
            ));
        }
        let (data, shape) = transpose_last2(self.data(a), shape);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(AutodiffError::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let t = Tensor::new(new_shape, out)?;
        Ok(self.push(
            t,
            Op::Slice {
                input: a,
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| F::one() / (F::one() + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(t, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::invalid(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.data(a);
        let mut out = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(F::neg_infinity(), F::max);
                let mut total = F::zero();
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax { input: a, axis }))
    }

    /// Inverted dropout: surviving entries are divided by the keep
    /// probability, so evaluation mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: F,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(p >= F::zero() && p < F::one()) {
            return Err(AutodiffError::invalid(
                "dropout",
                format!("probability {p} outside [0, 1)"),
            ));
        }
        if !train || p == F::zero() {
            return Ok(a);
        }
        let keep = F::one() - p;
        let p64 = p.to_f64_lossy();
        let mask: Vec<F> = (0..self.value(a).numel())
            .map(|_| {
                if rng.random::<f64>() < p64 {
                    F::zero()
                } else {
                    F::one() / keep
                }
            })
            .collect();
        let src = self.value(a);
        let data = src.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { input: a, mask }))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().copied().sum::<F>() / F::from_usize(d.len()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    fn reduce_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(Tensor<F>, usize)> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(AutodiffError::invalid(
                op,
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_extents(shape, axis);
        let src = self.data(a);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[o * n * inner + j * inner + i];
                }
            }
        }
        Ok((Tensor::new(reduced_shape(shape, axis), out)?, n))
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (t, _) = self.reduce_axis("sum_axis", a, axis)?;
        Ok(self.push(t, Op::SumAxis { input: a, axis }))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (t, n) = self.reduce_axis("mean_axis", a, axis)?;
        let inv = F::one() / F::from_usize(n).unwrap();
        let t = t.map(|x| x * inv);
        Ok(self.push(t, Op::MeanAxis { input: a, axis }))
    }

    /// Mask-aware time pooling: `[B, T, d]` with a `B*T` mask gives `[B, d]`,
    /// averaging only the frames whose mask is true. A sample with no valid
    /// frame pools to the zero vector.
    pub fn masked_mean(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return Err(AutodiffError::shape(
                "masked_mean",
                &shape,
                &[mask.len()],
            ));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let src = self.data(a);
        let mut out = vec![F::zero(); b * d];
        for i in 0..b {
            let valid = &mask[i * t..(i + 1) * t];
            let count = valid.iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let inv = F::one() / F::from_usize(count).unwrap();
            let row = &mut out[i * d..(i + 1) * d];
            for (step, _) in valid.iter().enumerate().filter(|(_, &m)| m) {
                let frame = &src[(i * t + step) * d..(i * t + step + 1) * d];
                for (o, &x) in row.iter_mut().zip(frame) {
                    *o = *o + x * inv;
                }
            }
        }
        let tensor = Tensor::new(vec![b, d], out)?;
        Ok(self.push(
            tensor,
            Op::MaskedMean {
                input: a,
                mask: mask.to_vec(),
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Mean absolute error between two equally shaped tensors.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let (p, t) = (self.data(pred), self.data(target));
        let n = F::from_usize(p.len()).unwrap();
        let v = p.iter().zip(t).map(|(&x, &y)| (x - y).abs()).sum::<F>() / n;
        Ok(self.push(Tensor::scalar(v), Op::L1 { pred, target }))
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.data(pred), self.data(target));
        let n = F::from_usize(p.len()).unwrap();
        let v = p
            .iter()
            .zip(t)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<F>()
            / n;
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }))
    }

    /// Flattened outer product with `a` as the major index:
    /// `[m] x [n] -> [m*n]` or row-wise `[B, m] x [B, n] -> [B, m*n]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, n, shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m], [n]) => (1, *m, *n, vec![m * n]),
            ([b1, m], [b2, n]) if b1 == b2 => (*b1, *m, *n, vec![*b1, m * n]),
            _ => return Err(AutodiffError::shape("outer", &sa, &sb)),
        };
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(batch * m * n);
        for r in 0..batch {
            for i in 0..m {
                let x = da[r * m + i];
                out.extend(db[r * n..(r + 1) * n].iter().map(|&y| x * y));
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Outer(a, b)))
    }

    /// Reverse sweep from a scalar `loss`. Every gradient slot of `params` is
    /// overwritten: parameters that do not reach the loss get zeros.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
        if !self.record {
            return Err(AutodiffError::NoGrad);
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        params.zero_grads();
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(p) = node.param {
                let slot = params.grad_mut(crate::params::ParamId(p));
                slot.add_assign(&g);
            }
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -F::one()
                } else {
                    F::one()
                };
                let mut ga = vec![F::zero(); self.value(*a).numel()];
                let mut gb = vec![F::zero(); self.value(*b).numel()];
                let (la, lb) = (ga.len(), gb.len());
                for (i, &x) in gd.iter().enumerate() {
                    ga[i % la] = ga[i % la] + x;
                    gb[i % lb] = gb[i % lb] + sign * x;
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let (la, lb) = (da.len(), db.len());
                let mut ga = vec![F::zero(); la];
                let mut gb = vec![F::zero(); lb];
                for (i, &x) in gd.iter().enumerate() {
                    ga[i % la] = ga[i % la] + x * db[i % lb];
                    gb[i % lb] = gb[i % lb] + x * da[i % la];
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gd.iter().map(|&x| x * *c).collect())?;
            }
            Op::MatMul(a, b) => {
                let (mode, _) = matmul_mode(self.shape(*a), self.shape(*b))?;
                let (da, db) = (self.data(*a), self.data(*b));
                let mut ga = vec![F::zero(); da.len()];
                let mut gb = vec![F::zero(); db.len()];
                match mode {
                    MatMulMode::Shared { rows, k, n } => {
                        gemm_bt(gd, db, &mut ga, rows, k, n);
                        gemm_at(da, gd, &mut gb, rows, k, n);
                    }
                    MatMulMode::Batched { batch, m, k, n } => {
                        for i in 0..batch {
                            let gs = &gd[i * m * n..(i + 1) * m * n];
                            gemm_bt(gs, &db[i * k * n..(i + 1) * k * n], &mut ga[i * m * k..(i + 1) * m * k], m, k, n);
                            gemm_at(&da[i * m * k..(i + 1) * m * k], gs, &mut gb[i * k * n..(i + 1) * k * n], m, k, n);
                        }
                    }
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Transpose(a) => {
                let (data, _) = transpose_last2(gd, g.shape());
                self.accumulate(grads, *a, data)?;
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_extents(g.shape(), *axis);
                let mut parts: Vec<Vec<F>> = inputs
                    .iter()
                    .map(|&v| Vec::with_capacity(self.value(v).numel()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (part, &v) in parts.iter_mut().zip(inputs) {
                        let len = self.shape(v)[*axis] * inner;
                        part.extend_from_slice(&gd[offset..offset + len]);
                        offset += len;
                    }
                }
                for (part, &v) in parts.into_iter().zip(inputs) {
                    self.accumulate(grads, v, part)?;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let (outer, n, inner) = axis_extents(in_shape, *axis);
                let len = g.shape()[*axis];
                let mut gi = vec![F::zero(); self.value(*input).numel()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                self.accumulate(grads, *input, gi)?;
            }
            Op::Reshape(a) => self.accumulate(grads, *a, gd.to_vec())?,
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let gi = gd
                    .iter()
                    .zip(y)
                    .map(|(&x, &s)| x * s * (F::one() - s))
                    .collect();
                self.accumulate(grads, *a, gi)?;
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let gi = gd
                    .iter()
                    .zip(y)
                    .map(|(&x, &t)| x * (F::one() - t * t))
                    .collect();
                self.accumulate(grads, *a, gi)?;
            }
            Op::Relu(a) => {
                let xin = self.data(*a);
                let gi = gd
                    .iter()
                    .zip(xin)
                    .map(|(&x, &v)| if v > F::zero() { x } else { F::zero() })
                    .collect();
                self.accumulate(grads, *a, gi)?;
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_extents(node.value.shape(), *axis);
                let mut gi = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * n * inner + j * inner + i;
                        let dot: F = (0..n).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gi[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, gi)?;
            }
            Op::Dropout { input, mask } => {
                let gi = gd.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                self.accumulate(grads, *input, gi)?;
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![gd[0]; n])?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let v = gd[0] / F::from_usize(n).unwrap();
                self.accumulate(grads, *a, vec![v; n])?;
            }
            Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
                let (outer, n, inner) = axis_extents(self.shape(*input), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                    F::one() / F::from_usize(n).unwrap()
                } else {
                    F::one()
                };
                let mut gi = vec![F::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            gi[o * n * inner + j * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
                self.accumulate(grads, *input, gi)?;
            }
            Op::MaskedMean { input, mask } => {
                let shape = self.shape(*input);
                let (b, t, d) = (shape[0], shape[1], shape[2]);
                let mut gi = vec![F::zero(); b * t * d];
                for i in 0..b {
                    let valid = &mask[i * t..(i + 1) * t];
                    let count = valid.iter().filter(|&&m| m).count();
                    if count == 0 {
                        continue;
                    }
                    let inv = F::one() / F::from_usize(count).unwrap();
                    for (step, _) in valid.iter().enumerate().filter(|(_, &m)| m) {
                        for k in 0..d {
                            gi[(i * t + step) * d + k] = gd[i * d + k] * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, gi)?;
            }
            Op::L1 { pred, target } | Op::Mse { pred, target } => {
                let l1 = matches!(node.op, Op::L1 { .. });
                let (p, t) = (self.data(*pred), self.data(*target));
                let inv = gd[0] / F::from_usize(p.len()).unwrap();
                let two = F::one() + F::one();
                let gp: Vec<F> = p
                    .iter()
                    .zip(t)
                    .map(|(&x, &y)| {
                        let diff = x - y;
                        if l1 {
                            let s = if diff > F::zero() {
                                F::one()
                            } else if diff < F::zero() {
                                -F::one()
                            } else {
                                F::zero()
                            };
                            s * inv
                        } else {
                            two * diff * inv
                        }
                    })
                    .collect();
                let gt = gp.iter().map(|&x| -x).collect();
                self.accumulate(grads, *pred, gp)?;
                self.accumulate(grads, *target, gt)?;
            }
            Op::Outer(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, n) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                let batch = da.len() / m;
                let mut ga = vec![F::zero(); da.len()];
                let mut gb = vec![F::zero(); db.len()];
                for r in 0..batch {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = gd[r * m * n + i * n + j];
                            ga[r * m + i] = ga[r * m + i] + gv * db[r * n + j];
                            gb[r * n + j] = gb[r * n + j] + gv * da[r * m + i];
                        }
                    }
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, data: Vec<F>) -> Result<()> {
        let t = Tensor::new(self.shape(v).to_vec(), data)?;
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
        Ok(())
    }
}
