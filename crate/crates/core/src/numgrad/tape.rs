//! Reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its forward value to the tape, so
//! node order is a topological order and backward is a single reverse sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::{ParamId, ParamStore, Real, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Concat(Var, Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    RowNorm(Var),
    RowSum(Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    SigmoidBce {
        logits: Var,
        targets: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Statistics used by [`Tape::batchnorm`].
#[derive(Debug, Clone)]
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with fixed per-feature mean and (biased) variance.
    Fixed { mean: &'a [T], var: &'a [T] },
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape<T = f64> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.numel() != b.numel() || a.cols() != b.cols() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    /// Process-unique identifier, usable as a cache key for per-tape values.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients stop here.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: T) -> Var {
        self.input(Tensor::scalar(value))
    }

    /// Leaf bound to a stored parameter. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul_t(false, vb, false);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.numel() != vx.cols() {
            return Err(Error::shape("add_bias", vx.shape(), vb.shape()));
        }
        let c = vx.cols();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + vb.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(op, va, vb)?;
        Ok(va.zip_map(vb, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::Offset(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// `max(x, 0)`; also the hinge `[·]_+`.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::abs);
        self.push(out, Op::Abs(x))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    /// Per-feature normalization followed by the affine `gamma·x̂ + beta`.
    ///
    /// Returns the output and, for batch statistics, the batch mean and
    /// biased variance so the caller can update running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let vx = self.value(x);
        let (rows, cols) = (vx.rows(), vx.cols());
        for p in [gamma, beta] {
            if self.value(p).numel() != cols {
                return Err(Error::shape("batchnorm", vx.shape(), self.value(p).shape()));
            }
        }
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                if rows < 2 {
                    return Err(Error::Contract(format!(
                        "batch statistics need at least 2 rows, got {rows}"
                    )));
                }
                let n = T::of(rows as f64);
                let mut mean = vec![T::zero(); cols];
                for r in 0..rows {
                    for (m, &v) in mean.iter_mut().zip(vx.row(r)) {
                        *m = *m + v;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); cols];
                for r in 0..rows {
                    for ((s, &v), &m) in var.iter_mut().zip(vx.row(r)).zip(&mean) {
                        *s = *s + (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                (mean, var, true)
            }
            NormStats::Fixed { mean, var } => {
                if mean.len() != cols || var.len() != cols {
                    return Err(Error::shape("batchnorm", vx.shape(), &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vx.clone();
        for (i, v) in xhat.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            *v = (*v - mean[c]) * inv_std[c];
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            *v = g[c] * *v + b[c];
        }
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        Ok((v, batch_stats.then_some((mean, var))))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::shape("concat", va.shape(), vb.shape()));
        }
        let (ca, cb) = (va.cols(), vb.cols());
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let out = Tensor::new(vec![va.rows(), ca + cb], data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Selects rows `idx` of `x` (repeats allowed).
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let rows = vx.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("gather index {bad} out of {rows} rows")));
        }
        let mut data = Vec::with_capacity(idx.len() * vx.cols());
        for &i in idx {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor::new(vec![idx.len(), vx.cols()], data)?;
        Ok(self.push(out, Op::Gather(x, idx.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Euclidean norm of every row, as a column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = (0..vx.rows())
            .map(|r| vx.row(r).iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect::<Vec<_>>();
        let out = Tensor::new(vec![data.len(), 1], data).expect("column");
        self.push(out, Op::RowNorm(x))
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = (0..vx.rows())
            .map(|r| vx.row(r).iter().copied().sum::<T>())
            .collect::<Vec<_>>();
        let out = Tensor::new(vec![data.len(), 1], data).expect("column");
        self.push(out, Op::RowSum(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Per-row cross-entropy `−ln softmax(logits)[target]`, as a column.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if targets.len() != vl.rows() {
            return Err(Error::shape("softmax_xent", vl.shape(), &[targets.len()]));
        }
        let cols = vl.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Contract(format!("target index {bad} out of {cols} classes")));
        }
        let probs = softmax_rows(vl);
        let data = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let row = vl.row(r);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                lse - row[t]
            })
            .collect::<Vec<_>>();
        let out = Tensor::new(vec![data.len(), 1], data)?;
        Ok(self.push(
            out,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Per-row summed binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let vl = self.value(logits);
        same_shape("sigmoid_bce", vl, &targets)?;
        let cols = vl.cols();
        let data = (0..vl.rows())
            .map(|r| {
                vl.row(r)
                    .iter()
                    .zip(&targets.data()[r * cols..(r + 1) * cols])
                    .map(|(&z, &t)| z.max(T::zero()) - t * z + (-z.abs()).exp().ln_1p())
                    .sum::<T>()
            })
            .collect::<Vec<_>>();
        let out = Tensor::new(vec![data.len(), 1], data)?;
        Ok(self.push(out, Op::SigmoidBce { logits, targets }))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂p` into every parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        let mut bound: Vec<_> = self.params.iter().collect();
        bound.sort_by_key(|(id, _)| **id);
        for (&id, &v) in bound {
            if let Some(g) = grads.get(v) {
                store.accumulate(id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut send = |v: Var, d: Tensor<T>| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.matmul_t(false, vb, true).reshape(va.shape().to_vec());
                let db = va.matmul_t(true, g, false).reshape(vb.shape().to_vec());
                send(*a, da.expect("matmul grad shape"));
                send(*b, db.expect("matmul grad shape"));
            }
            Op::AddBias(x, b) => {
                let vb = self.value(*b);
                let c = g.cols();
                let mut db = Tensor::zeros(vb.shape());
                for (k, &v) in g.data().iter().enumerate() {
                    db.data_mut()[k % c] = db.data()[k % c] + v;
                }
                send(*x, g.clone());
                send(*b, db);
            }
            Op::Add(a, b) => {
                send(*a, self.like(*a, g));
                send(*b, self.like(*b, g));
            }
            Op::Sub(a, b) => {
                send(*a, self.like(*a, g));
                send(*b, self.like(*b, &g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, self.like(*a, &g.zip_map(vb, |d, y| d * y)));
                send(*b, self.like(*b, &g.zip_map(va, |d, x| d * x)));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, self.like(*a, &g.zip_map(vb, |d, y| d / y)));
                let gb = g
                    .zip_map(va, |d, x| d * x)
                    .zip_map(vb, |dx, y| -dx / (y * y));
                send(*b, self.like(*b, &gb));
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * *c)),
            Op::Offset(x) => send(*x, g.clone()),
            Op::Sigmoid(x) => send(*x, g.zip_map(y, |d, s| d * s * (T::one() - s))),
            Op::Tanh(x) => send(*x, g.zip_map(y, |d, t| d * (T::one() - t * t))),
            Op::Relu(x) => {
                let vx = self.value(*x);
                send(*x, g.zip_map(vx, |d, v| if v > T::zero() { d } else { T::zero() }));
            }
            Op::Abs(x) => {
                let vx = self.value(*x);
                send(*x, g.zip_map(vx, |d, v| d * sign(v)));
            }
            Op::Softmax(x) => {
                let c = y.cols();
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for k in 0..c {
                        dx.data_mut()[r * c + k] = yr[k] * (gr[k] - dot);
                    }
                }
                send(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (rows, cols) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                for (k, (&d, &h)) in g.data().iter().zip(xhat.data()).enumerate() {
                    dgamma[k % cols] = dgamma[k % cols] + d * h;
                    dbeta[k % cols] = dbeta[k % cols] + d;
                }
                let mut dx = g.clone();
                let n = T::of(rows as f64);
                for (k, v) in dx.data_mut().iter_mut().enumerate() {
                    let c = k % cols;
                    *v = if *batch_stats {
                        // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                        gam[c] * inv_std[c] / n * (n * *v - dbeta[c] - xhat.data()[k] * dgamma[c])
                    } else {
                        gam[c] * inv_std[c] * *v
                    };
                }
                let gshape = self.value(*gamma).shape().to_vec();
                send(*x, dx);
                send(*gamma, Tensor::new(gshape.clone(), dgamma).expect("gamma"));
                send(*beta, Tensor::new(gshape, dbeta).expect("beta"));
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let mut da = Vec::with_capacity(g.rows() * ca);
                let mut db = Vec::with_capacity(g.rows() * cb);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                send(*a, Tensor::new(self.value(*a).shape().to_vec(), da).expect("concat"));
                send(*b, Tensor::new(self.value(*b).shape().to_vec(), db).expect("concat"));
            }
            Op::Gather(x, idx) => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut dx = Tensor::zeros(vx.shape());
                for (r, &src) in idx.iter().enumerate() {
                    let gr = g.row(r);
                    let dst = &mut dx.data_mut()[src * c..(src + 1) * c];
                    for (d, &v) in dst.iter_mut().zip(gr) {
                        *d = *d + v;
                    }
                }
                send(*x, dx);
            }
            Op::Reshape(x) => send(*x, self.like(*x, g)),
            Op::RowNorm(x) => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut dx = vx.clone();
                for r in 0..vx.rows() {
                    let norm = y.data()[r];
                    let d = g.data()[r];
                    for v in &mut dx.data_mut()[r * c..(r + 1) * c] {
                        // subgradient 0 at the origin
                        *v = if norm > T::zero() { d * *v / norm } else { T::zero() };
                    }
                }
                send(*x, dx);
            }
            Op::RowSum(x) => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut dx = Tensor::zeros(vx.shape());
                for (k, v) in dx.data_mut().iter_mut().enumerate() {
                    *v = g.data()[k / c];
                }
                send(*x, dx);
            }
            Op::Sum(x) => {
                let d = g.item();
                send(*x, Tensor::full(self.value(*x).shape(), d));
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let c = probs.cols();
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let d = g.data()[r];
                    let row = &mut dl.data_mut()[r * c..(r + 1) * c];
                    row[t] = row[t] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * d);
                }
                send(*logits, dl);
            }
            Op::SigmoidBce { logits, targets } => {
                let vl = self.value(*logits);
                let c = vl.cols();
                let mut dl = vl.map(sigmoid);
                for (k, v) in dl.data_mut().iter_mut().enumerate() {
                    *v = (*v - targets.data()[k]) * g.data()[k / c];
                }
                send(*logits, dl);
            }
        }
    }

    fn like(&self, v: Var, g: &Tensor<T>) -> Tensor<T> {
        g.clone()
            .reshape(self.value(v).shape().to_vec())
            .expect("gradient shape")
    }
}

/// Per-node gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * c..(r + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let s = row.iter().copied().sum::<T>();
        row.iter_mut().for_each(|v| *v = *v / s);
    }
    out
}
