//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and records itself on the tape; `backward`
//! replays the records in reverse, applying each op's vector-Jacobian product.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Batch-norm variance epsilon.
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
        floor: T,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        batch: usize,
    },
    AvgPool {
        input: Var,
        k: usize,
    },
    Subsample {
        input: Var,
        stride: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Reshape(Var),
    ScatterRows {
        src: Var,
        index: Vec<usize>,
    },
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// How a batch-norm layer normalizes.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with fixed (running) mean and variance.
    Fixed { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch mean and biased variance.
pub type BatchStats<T> = (Vec<T>, Vec<T>);

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, ParamId), Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, shapes: &[&[usize]]) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {shapes:?}"))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records parameter `id` of `store`. Repeated calls within one tape return
    /// the same node, so gradients from every use are summed.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.store_id(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, &[ta.shape(), tb.shape()]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    /// Adds `bias` (rank 1, length n) to every row of `x` (last dim n).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != n {
            return Err(shape_err("add_bias", &[sx, sb]));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let k = *t
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("softmax of a rank-0 tensor"))?;
        let mut out = Tensor::zeros(t.shape());
        for (src, dst) in t.data().chunks(k).zip(out.data_mut().chunks_mut(k)) {
            kernels::softmax_row(src, dst);
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Mean over rows of `-ln(max(probs[r, targets[r]], floor))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.ndim() != 2 || p.shape()[0] != targets.len() {
            return Err(Error::invalid(format!(
                "cross_entropy: probabilities {:?} vs {} targets",
                p.shape(),
                targets.len()
            )));
        }
        let k = p.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!(
                "cross_entropy: target {bad} out of range for {k} categories"
            )));
        }
        let floor = T::lit(floor);
        let total: T = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -p.data()[r * k + t].max(floor).ln())
            .sum();
        let loss = total / T::lit(targets.len() as f64);
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
                floor,
            },
            ng,
        ))
    }

    /// 2-D convolution. `input` is NCHW, `weight` is OIHW, `bias` has length O.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if si.len() != 4 || sw.len() != 4 || sb.len() != 1 || si[1] != sw[1] || sb[0] != sw[0] || stride == 0 {
            return Err(shape_err("conv2d", &[si, sw, sb]));
        }
        if si[2] + 2 * pad < sw[2] || si[3] + 2 * pad < sw[3] {
            return Err(shape_err("conv2d", &[si, sw]));
        }
        let geom = ConvGeom {
            channels: si[1],
            height: si[2],
            width: si[3],
            out_channels: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
        };
        let batch = si[0];
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            batch,
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let shape = vec![batch, geom.out_channels, geom.out_h(), geom.out_w()];
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
            },
            ng,
        ))
    }

    fn nchw(&self, x: Var, name: &str, k: usize) -> Result<(usize, usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
            return Err(Error::invalid(format!(
                "{name}: shape {s:?} is not NCHW divisible by {k}"
            )));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    /// Non-overlapping `k×k` average pooling on NCHW input.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "avg_pool", k)?;
        let out = kernels::avg_pool_forward(self.value(x).data(), n * c, h, w, k);
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, c, h / k, w / k], out)?,
            Op::AvgPool { input: x, k },
            ng,
        ))
    }

    /// Keeps every `stride`-th row and column of each NCHW plane.
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "subsample", stride)?;
        let out = kernels::subsample_forward(self.value(x).data(), n * c, h, w, stride);
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, c, h / stride, w / stride], out)?,
            Op::Subsample { input: x, stride },
            ng,
        ))
    }

    /// Per-channel batch normalization of NCHW input. In
    /// [`BatchNormMode::Batch`] the batch mean and biased variance are
    /// returned so the caller can update running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.nchw(x, "batch_norm", 1)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm", &[self.shape(x), self.shape(gamma), self.shape(beta)]));
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let (mean, var, stats) = match mode {
            BatchNormMode::Batch => {
                let (m, v) = kernels::channel_stats(xs, n, c, plane);
                (m.clone(), v.clone(), Some((m, v)))
            }
            BatchNormMode::Fixed { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::invalid("batch_norm: running statistics length mismatch"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let eps = T::lit(BATCH_NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    xhat[i] = (xs[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            Tensor::new(vec![n, c, h, w], out)?,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_some(),
            },
            ng,
        );
        Ok((v, stats))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Flattens everything but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// `[rows, K]` tensor of zeros with row `index[i]` set to row `i` of `src`.
    pub fn scatter_rows(&mut self, src: Var, index: &[usize], rows: usize) -> Result<Var> {
        let s = self.value(src);
        if s.ndim() != 2 || s.shape()[0] != index.len() || index.iter().any(|&r| r >= rows) {
            return Err(Error::invalid(format!(
                "scatter_rows: source {:?}, {} indices into {rows} rows",
                s.shape(),
                index.len()
            )));
        }
        let k = s.shape()[1];
        let mut out = Tensor::zeros(&[rows, k]);
        for (i, &r) in index.iter().enumerate() {
            out.data_mut()[r * k..(r + 1) * k].copy_from_slice(s.row(i));
        }
        let ng = self.needs(src);
        Ok(self.push(
            out,
            Op::ScatterRows {
                src,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    /// Rows `index[..]` of a rank-2 tensor.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let s = self.value(src);
        if s.ndim() != 2 || index.iter().any(|&r| r >= s.shape()[0]) || index.is_empty() {
            return Err(Error::invalid(format!(
                "gather_rows: bad indices for {:?}",
                s.shape()
            )));
        }
        let k = s.shape()[1];
        let mut data = Vec::with_capacity(index.len() * k);
        for &r in index {
            data.extend_from_slice(s.row(r));
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::new(vec![index.len(), k], data)?,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.value(src);
        if s.ndim() != 2 || len == 0 || start + len > s.shape()[1] {
            return Err(Error::invalid(format!(
                "slice_cols: {start}..{} out of range for {:?}",
                start + len,
                s.shape()
            )));
        }
        let (rows, k) = (s.shape()[0], s.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&s.data()[r * k + start..r * k + start + len]);
        }
        let ng = self.needs(src);
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols { src, start }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / T::lit(t.len() as f64);
        let ng = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Internal(format!(
                "loss node {} is not on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backprop_node(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&(store, id), &v)| (store, id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut put = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(m, n, k, gd, false, val(*b).data(), true, T::zero(), &mut da);
                    put(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(k, m, n, val(*a).data(), true, gd, false, T::zero(), &mut db);
                    put(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                put(*a, g.clone());
                put(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.needs(*a) {
                    let d = gd.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    put(*a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                if self.needs(*b) {
                    let d = gd.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    put(*b, Tensor::new(tb.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, f) => put(*a, g.map(|x| x * *f)),
            Op::AddBias(x, b) => {
                put(*x, g.clone());
                if self.needs(*b) {
                    let n = val(*b).len();
                    let mut db = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    put(*b, Tensor::new(vec![n], db)?);
                }
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                put(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Tanh(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                put(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                put(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax(x) => {
                let k = *g.shape().last().expect("rank >= 1");
                let mut d = vec![T::zero(); gd.len()];
                for ((grow, yrow), drow) in gd.chunks(k).zip(node.value.data().chunks(k)).zip(d.chunks_mut(k)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = yv * (gv - dot);
                    }
                }
                put(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::CrossEntropy {
                probs,
                targets,
                floor,
            } => {
                let p = val(*probs);
                let k = p.shape()[1];
                let scale = gd[0] / T::lit(targets.len() as f64);
                let mut d = vec![T::zero(); p.len()];
                for (r, &t) in targets.iter().enumerate() {
                    let pv = p.data()[r * k + t];
                    if pv > *floor {
                        d[r * k + t] = -scale / pv;
                    }
                }
                put(*probs, Tensor::new(p.shape().to_vec(), d)?);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    val(*input).data(),
                    *batch,
                    val(*weight).data(),
                    gd,
                    geom,
                    self.needs(*input),
                );
                if let Some(dx) = dx {
                    put(*input, Tensor::new(val(*input).shape().to_vec(), dx)?);
                }
                put(*weight, Tensor::new(val(*weight).shape().to_vec(), dw)?);
                put(*bias, Tensor::new(val(*bias).shape().to_vec(), db)?);
            }
            Op::AvgPool { input, k } => {
                let s = val(*input).shape();
                let dx = kernels::avg_pool_backward(gd, s[0] * s[1], s[2], s[3], *k);
                put(*input, Tensor::new(s.to_vec(), dx)?);
            }
            Op::Subsample { input, stride } => {
                let s = val(*input).shape();
                let dx = kernels::subsample_backward(gd, s[0] * s[1], s[2], s[3], *stride);
                put(*input, Tensor::new(s.to_vec(), dx)?);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = val(*input).shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let gam = val(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for smp in 0..n {
                    for ch in 0..c {
                        let base = (smp * c + ch) * plane;
                        for i in base..base + plane {
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.needs(*input) {
                    let m = T::lit((n * plane) as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for smp in 0..n {
                        for ch in 0..c {
                            let base = (smp * c + ch) * plane;
                            for i in base..base + plane {
                                dx[i] = if *batch_stats {
                                    // dgamma/dbeta are the sums of dxhat·xhat and dxhat, up to gamma
                                    gam[ch] * inv_std[ch] / m
                                        * (m * gd[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                } else {
                                    gam[ch] * inv_std[ch] * gd[i]
                                };
                            }
                        }
                    }
                    put(*input, Tensor::new(s.to_vec(), dx)?);
                }
                put(*gamma, Tensor::new(vec![c], dgamma)?);
                put(*beta, Tensor::new(vec![c], dbeta)?);
            }
            Op::Reshape(x) => put(*x, g.clone().reshape(val(*x).shape())?),
            Op::ScatterRows { src, index } => {
                let k = g.shape()[1];
                let mut d = Vec::with_capacity(index.len() * k);
                for &r in index {
                    d.extend_from_slice(&gd[r * k..(r + 1) * k]);
                }
                put(*src, Tensor::new(vec![index.len(), k], d)?);
            }
            Op::GatherRows { src, index } => {
                let s = val(*src).shape();
                let k = s[1];
                let mut d = Tensor::zeros(s);
                for (i, &r) in index.iter().enumerate() {
                    for j in 0..k {
                        d.data_mut()[r * k + j] += gd[i * k + j];
                    }
                }
                put(*src, d);
            }
            Op::SliceCols { src, start } => {
                let s = val(*src).shape();
                let (rows, k) = (s[0], s[1]);
                let len = g.shape()[1];
                let mut d = Tensor::zeros(s);
                for r in 0..rows {
                    d.data_mut()[r * k + start..r * k + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                put(*src, d);
            }
            Op::Sum(x) => put(*x, Tensor::full(val(*x).shape(), gd[0])),
            Op::Mean(x) => {
                let t = val(*x);
                put(*x, Tensor::full(t.shape(), gd[0] / T::lit(t.len() as f64)));
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(u64, ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a recorded value, if any flowed.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of every parameter of `store` used on the tape into
    /// the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(sid, id, v) in &self.params {
            if sid != store.store_id() {
                continue;
            }
            if let Some(g) = self.wrt(v) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}
