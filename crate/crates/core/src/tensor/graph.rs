use super::gemm::gemm;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the reduced axes.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        training: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Sum(Var),
    RowSum(Var),
    Square(Var),
    VectorNorm(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
///
/// Every primitive appends one node whose operands precede it, so node
/// order is a topological order and [`Graph::backward`] simply walks it
/// in reverse. Gradients of values used several times are summed.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, or `None` when
    /// `v` does not depend on any parameter or does not reach the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, t: &Tensor, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: t.shape().to_vec(),
        reason: reason.into(),
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor { shape, data }
}

/// Output length of a 1-D convolution, if the kernel fits.
pub(crate) fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], cin: usize, len: usize, k: usize, stride: usize, padding: usize, lout: usize, cols: &mut [f64], ld: usize) {
    for ci in 0..cin {
        let xrow = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let start = (ci * k + kk) * ld;
            let dst = &mut cols[start..start + lout];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - padding as isize;
                *d = if pos >= 0 && (pos as usize) < len { xrow[pos as usize] } else { 0.0 };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], cin: usize, len: usize, k: usize, stride: usize, padding: usize, lout: usize, dx: &mut [f64], ld: usize) {
    for ci in 0..cin {
        let xrow = &mut dx[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let start = (ci * k + kk) * ld;
            let src = &cols[start..start + lout];
            for (t, s) in src.iter().enumerate() {
                let pos = (t * stride + kk) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    xrow[pos as usize] += s;
                }
            }
        }
    }
}

/// `(batch, channels, inner)` view of a `[N, C]` or `[N, C, L]` tensor.
fn channel_layout(t: &Tensor) -> Option<(usize, usize, usize)> {
    match *t.shape() {
        [n, c] => Some((n, c, 1)),
        [n, c, l] => Some((n, c, l)),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = tensor(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product of two tensors of identical shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("multiply", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = tensor(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(tensor(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let &[r, c] = ta.shape() else {
            return Err(invalid("transpose", ta, "expected a matrix"));
        };
        let out = tensor(vec![c, r], transpose_data(r, c, ta.data()));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Cross-correlation (no kernel flip) of `[N, Cin, L]` with
    /// `[Cout, Cin, K]`, zero padding of `padding` on both ends.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(input), self.value(weight));
        let (n, cin, len) = match *tx.shape() {
            [n, c, l] => (n, c, l),
            _ => return Err(invalid("conv1d", tx, "input must be [batch, channels, length]")),
        };
        let (cout, k) = match *tw.shape() {
            [co, ci, k] if ci == cin => (co, k),
            _ => return Err(mismatch("conv1d", tx, tw)),
        };
        let lout = conv_output_len(len, k, stride, padding)
            .ok_or_else(|| invalid("conv1d", tx, format!("kernel {k} stride {stride} padding {padding} does not fit")))?;
        let mut out = vec![0.0; n * cout * lout];
        let mut cols = vec![0.0; cin * k * lout];
        for b in 0..n {
            im2col(&tx.data()[b * cin * len..(b + 1) * cin * len], cin, len, k, stride, padding, lout, &mut cols, lout);
            gemm(cout, cin * k, lout, tw.data(), false, &cols, false, 0.0, &mut out[b * cout * lout..(b + 1) * cout * lout]);
        }
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(
            tensor(vec![n, cout, lout], out),
            Op::Conv1d {
                input,
                weight,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Mean over the length axis: `[N, C, L] -> [N, C]`.
    pub fn global_average_pool(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let &[n, c, l] = ta.shape() else {
            return Err(invalid("global_average_pool", ta, "expected [batch, channels, length]"));
        };
        let data = ta.data().chunks_exact(l).map(|row| row.iter().sum::<f64>() / l as f64).collect();
        let rg = self.rg(a);
        Ok(self.push(tensor(vec![n, c], data), Op::GlobalAvgPool(a), rg))
    }

    /// Batch normalization with batch statistics over the batch and length
    /// axes of `[N, C]` or `[N, C, L]`; `gamma` and `beta` are `[C]`.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats), TensorError> {
        let tx = self.value(input);
        let (n, c, l) = channel_layout(tx).ok_or_else(|| invalid("batch_norm", tx, "expected [N, C] or [N, C, L]"))?;
        self.check_affine(tx, gamma, beta, c)?;
        let count = n * l;
        let x = tx.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                mean[ch] += x[base..base + l].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                var[ch] += x[base..base + l].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.batch_norm_apply(input, gamma, beta, &mean, inv_std, true, (n, c, l));
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Batch normalization with fixed statistics; a deterministic affine map.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let tx = self.value(input);
        let (n, c, l) = channel_layout(tx).ok_or_else(|| invalid("batch_norm", tx, "expected [N, C] or [N, C, L]"))?;
        self.check_affine(tx, gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(invalid("batch_norm", tx, "running statistics do not match channel count"));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.batch_norm_apply(input, gamma, beta, running_mean, inv_std, false, (n, c, l)))
    }

    fn check_affine(&self, tx: &Tensor, gamma: Var, beta: Var, c: usize) -> Result<(), TensorError> {
        for p in [gamma, beta] {
            let tp = self.value(p);
            if tp.shape() != [c] {
                return Err(mismatch("batch_norm", tx, tp));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        training: bool,
        (n, c, l): (usize, usize, usize),
    ) -> Var {
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let shape = self.value(input).shape().to_vec();
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        self.push(
            tensor(shape, out),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                training,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Row-wise softmax of a `[N, K]` matrix, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(invalid("softmax", ta, "expected [batch, classes]"));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(ta.shape()[1]) {
            softmax_in_place(row);
        }
        let out = tensor(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Row-wise `log(softmax(x))` of a `[N, K]` matrix without forming the
    /// softmax explicitly.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(invalid("log_softmax", ta, "expected [batch, classes]"));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(ta.shape()[1]) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = tensor(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `[N, D] -> [N]` sum over each row.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(invalid("row_sum", ta, "expected a matrix"));
        }
        let data = ta.rows().map(|r| r.iter().sum()).collect();
        let out = tensor(vec![ta.shape()[0]], data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowSum(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Euclidean norm of each row: `[N, D] -> [N]`.
    pub fn vector_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(invalid("vector_norm", ta, "expected a matrix"));
        }
        let data = ta.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let out = tensor(vec![ta.shape()[0]], data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::VectorNorm(a), rg))
    }

    /// Reverse pass from `root`, seeded with ones of `root`'s shape.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let shape = g.shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(g, b)| g * b).collect();
                    self.accumulate(grads, *a, tensor(shape.clone(), d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(g, a)| g * a).collect();
                    self.accumulate(grads, *b, tensor(shape, d));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.scale(*k)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, 0.0, &mut d);
                    self.accumulate(grads, *a, tensor(vec![m, k], d));
                }
                if self.rg(*b) {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, &mut d);
                    self.accumulate(grads, *b, tensor(vec![k, n], d));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (shape[0], shape[1]);
                self.accumulate(grads, *a, tensor(vec![c, r], transpose_data(r, c, g.data())));
            }
            Op::Conv1d {
                input,
                weight,
                stride,
                padding,
            } => self.conv1d_backward(*input, *weight, *stride, *padding, g, grads),
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, tensor(x.shape().to_vec(), d));
            }
            Op::GlobalAvgPool(a) => {
                let x = self.value(*a);
                let l = x.shape()[2];
                let mut d = Vec::with_capacity(x.len());
                for gv in g.data() {
                    d.extend(std::iter::repeat_n(gv / l as f64, l));
                }
                self.accumulate(grads, *a, tensor(x.shape().to_vec(), d));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                training,
                xhat,
                inv_std,
            } => self.batch_norm_backward(*input, *gamma, *beta, *training, xhat, inv_std, g, grads),
            Op::Softmax(a) => {
                let k = shape[1];
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), srow) in d.chunks_exact_mut(k).zip(g.data().chunks_exact(k)).zip(y.data().chunks_exact(k)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(g, s)| g * s).sum();
                    for ((dv, gv), sv) in drow.iter_mut().zip(grow).zip(srow) {
                        *dv = sv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, tensor(shape, d));
            }
            Op::LogSoftmax(a) => {
                let k = shape[1];
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), lrow) in d.chunks_exact_mut(k).zip(g.data().chunks_exact(k)).zip(y.data().chunks_exact(k)) {
                    let total: f64 = grow.iter().sum();
                    for ((dv, gv), lv) in drow.iter_mut().zip(grow).zip(lrow) {
                        *dv = gv - lv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, tensor(shape, d));
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, tensor(shape, d));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(x.shape(), g.item()));
            }
            Op::RowSum(a) => {
                let x = self.value(*a);
                let cols = x.shape()[1];
                let mut d = Vec::with_capacity(x.len());
                for gv in g.data() {
                    d.extend(std::iter::repeat_n(*gv, cols));
                }
                self.accumulate(grads, *a, tensor(x.shape().to_vec(), d));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| 2.0 * x * g).collect();
                self.accumulate(grads, *a, tensor(shape, d));
            }
            Op::VectorNorm(a) => {
                let x = self.value(*a);
                let cols = x.shape()[1];
                let mut d = vec![0.0; x.len()];
                for (r, (drow, xrow)) in d.chunks_exact_mut(cols).zip(x.data().chunks_exact(cols)).enumerate() {
                    let norm = y.data()[r];
                    if norm > 0.0 {
                        let s = g.data()[r] / norm;
                        for (dv, xv) in drow.iter_mut().zip(xrow) {
                            *dv = s * xv;
                        }
                    }
                }
                self.accumulate(grads, *a, tensor(x.shape().to_vec(), d));
            }
        }
    }

    fn conv1d_backward(&self, input: Var, weight: Var, stride: usize, padding: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (tx, tw) = (self.value(input), self.value(weight));
        let (n, cin, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (cout, k) = (tw.shape()[0], tw.shape()[2]);
        let lout = g.shape()[2];
        let need_dx = self.rg(input);
        let need_dw = self.rg(weight);
        let mut cols = vec![0.0; cin * k * lout];
        let mut dcols = vec![0.0; cin * k * lout];
        let mut dw = vec![0.0; tw.len()];
        let mut dx = if need_dx { vec![0.0; tx.len()] } else { Vec::new() };
        for b in 0..n {
            let gb = &g.data()[b * cout * lout..(b + 1) * cout * lout];
            if need_dw {
                im2col(&tx.data()[b * cin * len..(b + 1) * cin * len], cin, len, k, stride, padding, lout, &mut cols, lout);
                gemm(cout, lout, cin * k, gb, false, &cols, true, 1.0, &mut dw);
            }
            if need_dx {
                gemm(cin * k, cout, lout, tw.data(), true, gb, false, 0.0, &mut dcols);
                col2im(&dcols, cin, len, k, stride, padding, lout, &mut dx[b * cin * len..(b + 1) * cin * len], lout);
            }
        }
        if need_dw {
            self.accumulate(grads, weight, tensor(tw.shape().to_vec(), dw));
        }
        if need_dx {
            self.accumulate(grads, input, tensor(tx.shape().to_vec(), dx));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        training: bool,
        xhat: &[f64],
        inv_std: &[f64],
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let tx = self.value(input);
        let (n, c, l) = channel_layout(tx).expect("shape validated in forward");
        let gam = self.value(gamma).data();
        let gd = g.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    dgamma[ch] += gd[i] * xhat[i];
                    dbeta[ch] += gd[i];
                }
            }
        }
        if self.rg(input) {
            let mut dx = vec![0.0; tx.len()];
            let m = (n * l) as f64;
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * l;
                    for i in base..base + l {
                        dx[i] = if training {
                            // d/dx of gamma * (x - mean) / std with batch statistics.
                            gam[ch] * inv_std[ch] * (gd[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                        } else {
                            gam[ch] * inv_std[ch] * gd[i]
                        };
                    }
                }
            }
            self.accumulate(grads, input, tensor(tx.shape().to_vec(), dx));
        }
        self.accumulate(grads, gamma, tensor(vec![c], dgamma));
        self.accumulate(grads, beta, tensor(vec![c], dbeta));
    }
}

fn transpose_data(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

/// Numerically stable softmax of one score vector, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
