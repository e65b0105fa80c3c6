//! Tape-style computation graph.
//!
//! Nodes are appended in creation order, which is already a topological
//! order because every op's inputs must exist before the op itself. The
//! backward pass walks the tape once in reverse, so each node's gradient
//! is complete before it propagates to its inputs.

use crate::kernels;
use crate::tensor::Tensor;
use crate::TensorError;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    /// [m,k] x [k,n] -> [m,n]
    Matmul(NodeId, NodeId),
    /// [m,n] + [n] broadcast over rows
    AddRowBias(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    /// axis-1 concat of [n,a] and [n,b] -> [n,a+b]
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// [n,d] -> [n]
    RowSum(NodeId),
    /// [n,d] -> [n], picks one column
    SelectColumn(NodeId, usize),
    /// identity forward, negated gradient backward
    GradReverse(NodeId),
    /// mu + exp(log_sigma) * noise; no gradient into noise
    GaussianReparam {
        mu: NodeId,
        log_sigma: NodeId,
        noise: NodeId,
    },
    /// per-row 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log_sigma), [n,d] -> [n]
    KlStdNormal {
        mu: NodeId,
        log_sigma: NodeId,
    },
    /// per-element -t*log(sigmoid(l)) - (1-t)*log(1-sigmoid(l)), stable form
    SigmoidBce {
        logits: NodeId,
        targets: NodeId,
    },
    /// per-element -t*log(p) - (1-t)*log(1-p) on probabilities
    BceProb {
        p: NodeId,
        targets: NodeId,
    },
    /// per-row softmax cross-entropy, [n,c] + labels [n] -> [n]
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
    },
    /// per-element |tau - 1(u<0)| * u^2
    ExpectileSq(NodeId, f32),
    Reshape(NodeId),
}

pub(crate) struct Node {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// A single-use forward tape. Build the forward computation, call
/// [`Graph::backward`] on a scalar loss, then read gradients off leaves.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
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

    /// Data leaf: no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Parameter leaf: gradients are accumulated for it during backward.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if the node
    /// participated in it. Leaves not reachable from the loss have no
    /// stored gradient; see [`Graph::grad_or_zeros`].
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<f32> {
        match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.nodes[id.0].value.numel()],
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn unary(&mut self, op: Op, input: NodeId, value: Tensor) -> NodeId {
        let rg = self.rg(input);
        self.push(op, value, rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "add")?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "sub")?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "mul")?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> NodeId {
        let v = kernels::map(self.value(a), |x| x * c);
        self.unary(Op::Scale(a, c), a, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = kernels::map(self.value(a), |x| x.max(0.0));
        self.unary(Op::Relu(a), a, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = kernels::map(self.value(a), |x| x.tanh());
        self.unary(Op::Tanh(a), a, v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = kernels::map(self.value(a), kernels::sigmoid);
        self.unary(Op::Sigmoid(a), a, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = kernels::map(self.value(a), |x| x.exp());
        self.unary(Op::Exp(a), a, v)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, k) = self.value(a).as_matrix_dims();
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul: lhs {:?} (as {}x{}) vs rhs {:?}",
                self.shape(a),
                m,
                k,
                bs
            )));
        }
        let n = bs[1];
        let v = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::Matmul(a, b),
            Tensor::new(vec![m, n], v).expect("matmul shape"),
            rg,
        ))
    }

    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.value(a).as_matrix_dims();
        if self.value(bias).numel() != n {
            return Err(TensorError::ShapeMismatch(format!(
                "add_row_bias: matrix {:?} vs bias {:?}",
                self.shape(a),
                self.shape(bias)
            )));
        }
        let mut v = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for r in 0..m {
            for c in 0..n {
                v[r * n + c] += b[c];
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(
            Op::AddRowBias(a, bias),
            Tensor::new(shape, v).expect("bias shape"),
            rg,
        ))
    }

    /// 2-D convolution over `[n, c, h, w]` input with `[oc, ic, kh, kw]`
    /// weights, `[oc]` bias. Output spatial dims follow the usual
    /// `(h + 2*pad - kh) / stride + 1` rule.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        if !(1..=2).contains(&stride) {
            return Err(TensorError::Unsupported(format!(
                "conv2d stride {stride} (supported: 1, 2)"
            )));
        }
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d wants 4-d input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d channels: input {:?} vs weight {:?}",
                xs, ws
            )));
        }
        if self.value(b).numel() != ws[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d bias {:?} vs out channels {}",
                self.shape(b),
                ws[0]
            )));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d kernel {ws:?} larger than padded input {xs:?}"
            )));
        }
        let v = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            self.value(b).data(),
            stride,
            pad,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, v, rg))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ma, na) = self.value(a).as_matrix_dims();
        let (mb, nb) = self.value(b).as_matrix_dims();
        if ma != mb {
            return Err(TensorError::ShapeMismatch(format!(
                "concat rows: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut v = Vec::with_capacity(ma * (na + nb));
        let da = self.value(a).data();
        let db = self.value(b).data();
        for r in 0..ma {
            v.extend_from_slice(&da[r * na..(r + 1) * na]);
            v.extend_from_slice(&db[r * nb..(r + 1) * nb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::Concat(a, b),
            Tensor::new(vec![ma, na + nb], v).expect("concat shape"),
            rg,
        ))
    }

    /// Flatten to `[rows, cols]` without touching data.
    pub fn reshape_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId, TensorError> {
        let numel = self.value(a).numel();
        if rows == 0 || numel % rows != 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape_rows: {numel} elements into {rows} rows"
            )));
        }
        let cols = numel / rows;
        let v = Tensor::new(vec![rows, cols], self.value(a).data().to_vec()).expect("reshape");
        Ok(self.unary(Op::Reshape(a), a, v))
    }

    /// View with a new shape of equal element count; data order unchanged.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let numel = self.value(a).numel();
        if shape.iter().product::<usize>() != numel {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape: {numel} elements into {shape:?}"
            )));
        }
        let v = Tensor::new(shape.to_vec(), self.value(a).data().to_vec()).expect("reshape");
        Ok(self.unary(Op::Reshape(a), a, v))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f32 = self.value(a).data().iter().sum();
        self.unary(Op::Sum(a), a, Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f32;
        let s: f32 = self.value(a).data().iter().sum();
        self.unary(Op::Mean(a), a, Tensor::scalar(s / n))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).as_matrix_dims();
        let d = self.value(a).data();
        let v: Vec<f32> = (0..m).map(|r| d[r * n..(r + 1) * n].iter().sum()).collect();
        self.unary(Op::RowSum(a), a, Tensor::from_vec(v))
    }

    pub fn select_column(&mut self, a: NodeId, col: usize) -> Result<NodeId, TensorError> {
        let (m, n) = self.value(a).as_matrix_dims();
        if col >= n {
            return Err(TensorError::ShapeMismatch(format!(
                "select_column {col} of {:?}",
                self.shape(a)
            )));
        }
        let d = self.value(a).data();
        let v: Vec<f32> = (0..m).map(|r| d[r * n + col]).collect();
        Ok(self.unary(Op::SelectColumn(a, col), a, Tensor::from_vec(v)))
    }

    // ---- special ops ----

    /// Identity on the forward pass, exact negation of the upstream
    /// gradient on the backward pass.
    pub fn grad_reverse(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.unary(Op::GradReverse(a), a, v)
    }

    /// `mu + exp(log_sigma) * noise`. Gradients flow to `mu` and
    /// `log_sigma`; `noise` is treated as data.
    pub fn gaussian_reparam(
        &mut self,
        mu: NodeId,
        log_sigma: NodeId,
        noise: NodeId,
    ) -> Result<NodeId, TensorError> {
        self.same_shape(mu, log_sigma, "gaussian_reparam")?;
        self.same_shape(mu, noise, "gaussian_reparam")?;
        let m = self.value(mu).data();
        let ls = self.value(log_sigma).data();
        let e = self.value(noise).data();
        let v: Vec<f32> = m
            .iter()
            .zip(ls)
            .zip(e)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();
        let shape = self.shape(mu).to_vec();
        let rg = self.rg(mu) || self.rg(log_sigma);
        Ok(self.push(
            Op::GaussianReparam { mu, log_sigma, noise },
            Tensor::new(shape, v).expect("reparam shape"),
            rg,
        ))
    }

    /// Per-row KL(N(mu, exp(log_sigma)^2) || N(0, I)):
    /// `0.5 * sum_i (mu_i^2 + sigma_i^2 - 1 - 2 log_sigma_i)`, `[n,d] -> [n]`.
    pub fn kl_std_normal_rows(
        &mut self,
        mu: NodeId,
        log_sigma: NodeId,
    ) -> Result<NodeId, TensorError> {
        self.same_shape(mu, log_sigma, "kl_std_normal")?;
        let (m, n) = self.value(mu).as_matrix_dims();
        let md = self.value(mu).data();
        let ls = self.value(log_sigma).data();
        let v: Vec<f32> = (0..m)
            .map(|r| {
                let mut acc = 0.0f32;
                for c in 0..n {
                    let i = r * n + c;
                    let s2 = (2.0 * ls[i]).exp();
                    acc += md[i] * md[i] + s2 - 1.0 - 2.0 * ls[i];
                }
                0.5 * acc
            })
            .collect();
        let rg = self.rg(mu) || self.rg(log_sigma);
        Ok(self.push(
            Op::KlStdNormal { mu, log_sigma },
            Tensor::from_vec(v),
            rg,
        ))
    }

    /// KL to the standard normal summed over every element, as a scalar.
    pub fn kl_std_normal(&mut self, mu: NodeId, log_sigma: NodeId) -> Result<NodeId, TensorError> {
        let rows = self.kl_std_normal_rows(mu, log_sigma)?;
        Ok(self.sum(rows))
    }

    /// Numerically stable per-element binary cross-entropy from logits.
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(logits, targets, "sigmoid_bce")?;
        let l = self.value(logits).data();
        let t = self.value(targets).data();
        let v: Vec<f32> = l
            .iter()
            .zip(t)
            .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
            .collect();
        let shape = self.shape(logits).to_vec();
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SigmoidBce { logits, targets },
            Tensor::new(shape, v).expect("bce shape"),
            rg,
        ))
    }

    /// Per-element `-t log p - (1-t) log(1-p)` on probabilities, clamped to
    /// `[1e-7, 1-1e-7]` so endpoints stay finite.
    pub fn bce_prob(&mut self, p: NodeId, targets: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(p, targets, "bce_prob")?;
        let pd = self.value(p).data();
        let t = self.value(targets).data();
        let v: Vec<f32> = pd
            .iter()
            .zip(t)
            .map(|(&p, &t)| {
                let p = kernels::clamp_prob(p);
                -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
            })
            .collect();
        let shape = self.shape(p).to_vec();
        let rg = self.rg(p);
        Ok(self.push(
            Op::BceProb { p, targets },
            Tensor::new(shape, v).expect("bce shape"),
            rg,
        ))
    }

    /// Per-row softmax cross-entropy against integer labels.
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        let (m, c) = self.value(logits).as_matrix_dims();
        if labels.len() != m {
            return Err(TensorError::ShapeMismatch(format!(
                "softmax_xent: {m} rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let d = self.value(logits).data();
        let v: Vec<f32> = (0..m)
            .map(|r| {
                let row = &d[r * c..(r + 1) * c];
                let lse = kernels::log_sum_exp(row);
                lse - row[labels[r]]
            })
            .collect();
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::from_vec(v),
            rg,
        ))
    }

    /// Per-element expectile loss `|tau - 1(u < 0)| * u^2`.
    pub fn expectile_sq(&mut self, u: NodeId, tau: f32) -> Result<NodeId, TensorError> {
        if !(0.0..=1.0).contains(&tau) || tau == 0.0 || tau == 1.0 {
            return Err(TensorError::InvalidArgument(format!(
                "expectile tau {tau} outside (0,1)"
            )));
        }
        let v = kernels::map(self.value(u), |x| {
            let w = if x < 0.0 { 1.0 - tau } else { tau };
            w * x * x
        });
        Ok(self.unary(Op::ExpectileSq(u, tau), u, v))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Populates gradients for every
    /// node on a path from a gradient-requiring leaf to the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId, f: impl FnOnce(&mut [f32])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        let buf = self.grads[id.0].get_or_insert_with(|| vec![0.0; numel]);
        f(buf);
    }

    fn propagate(&mut self, i: usize, g: &[f32]) {
        // Values are read before mutably borrowing grad buffers.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, |buf| kernels::axpy(buf, g, 1.0));
                self.acc(b, |buf| kernels::axpy(buf, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(a, |buf| kernels::axpy(buf, g, 1.0));
                self.acc(b, |buf| kernels::axpy(buf, g, -1.0));
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * bv[k];
                    }
                });
                self.acc(b, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * av[k];
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc(a, |buf| kernels::axpy(buf, g, c));
            }
            Op::Relu(a) => {
                let av = self.nodes[a.0].value.data().to_vec();
                self.acc(a, |buf| {
                    for k in 0..buf.len() {
                        if av[k] > 0.0 {
                            buf[k] += g[k];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                self.acc(a, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * (1.0 - yv[k] * yv[k]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                self.acc(a, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * yv[k] * (1.0 - yv[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                self.acc(a, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * yv[k];
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.as_matrix_dims();
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if self.nodes[a.0].requires_grad {
                    // dA = g . B^T
                    let da = kernels::matmul_nt(g, &bv, m, n, k);
                    self.acc(a, |buf| kernels::axpy(buf, &da, 1.0));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . g
                    let db = kernels::matmul_tn(&av, g, m, k, n);
                    self.acc(b, |buf| kernels::axpy(buf, &db, 1.0));
                }
            }
            Op::AddRowBias(a, bias) => {
                let (m, n) = self.nodes[a.0].value.as_matrix_dims();
                self.acc(a, |buf| kernels::axpy(buf, g, 1.0));
                self.acc(bias, |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[c] += g[r * n + c];
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.nodes[x.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                let oshape = self.nodes[i].value.shape().to_vec();
                if self.nodes[x.0].requires_grad {
                    let dx = kernels::conv2d_backward_input(&wv, g, &oshape, xv.shape(), stride, pad);
                    self.acc(x, |buf| kernels::axpy(buf, &dx, 1.0));
                }
                if self.nodes[w.0].requires_grad {
                    let dw = kernels::conv2d_backward_weight(&xv, g, &oshape, wv.shape(), stride, pad);
                    self.acc(w, |buf| kernels::axpy(buf, &dw, 1.0));
                }
                if self.nodes[b.0].requires_grad {
                    let (oc, ohw) = (oshape[1], oshape[2] * oshape[3]);
                    let n = oshape[0];
                    self.acc(b, |buf| {
                        for img in 0..n {
                            for c in 0..oc {
                                let base = (img * oc + c) * ohw;
                                let mut acc = 0.0;
                                for p in 0..ohw {
                                    acc += g[base + p];
                                }
                                buf[c] += acc;
                            }
                        }
                    });
                }
            }
            Op::Concat(a, b) => {
                let (m, na) = self.nodes[a.0].value.as_matrix_dims();
                let (_, nb) = self.nodes[b.0].value.as_matrix_dims();
                let n = na + nb;
                self.acc(a, |buf| {
                    for r in 0..m {
                        for c in 0..na {
                            buf[r * na + c] += g[r * n + c];
                        }
                    }
                });
                self.acc(b, |buf| {
                    for r in 0..m {
                        for c in 0..nb {
                            buf[r * nb + c] += g[r * n + na + c];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.acc(a, |buf| {
                    for v in buf.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel() as f32;
                self.acc(a, |buf| {
                    let gv = g[0] / n;
                    for v in buf.iter_mut() {
                        *v += gv;
                    }
                });
            }
            Op::RowSum(a) => {
                let (m, n) = self.nodes[a.0].value.as_matrix_dims();
                self.acc(a, |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g[r];
                        }
                    }
                });
            }
            Op::SelectColumn(a, col) => {
                let (m, n) = self.nodes[a.0].value.as_matrix_dims();
                self.acc(a, |buf| {
                    for r in 0..m {
                        buf[r * n + col] += g[r];
                    }
                });
            }
            Op::GradReverse(a) => {
                self.acc(a, |buf| kernels::axpy(buf, g, -1.0));
            }
            Op::GaussianReparam { mu, log_sigma, noise } => {
                let ls = self.nodes[log_sigma.0].value.data().to_vec();
                let e = self.nodes[noise.0].value.data().to_vec();
                self.acc(mu, |buf| kernels::axpy(buf, g, 1.0));
                self.acc(log_sigma, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * ls[k].exp() * e[k];
                    }
                });
            }
            Op::KlStdNormal { mu, log_sigma } => {
                let (m, n) = self.nodes[mu.0].value.as_matrix_dims();
                let mv = self.nodes[mu.0].value.data().to_vec();
                let ls = self.nodes[log_sigma.0].value.data().to_vec();
                self.acc(mu, |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g[r] * mv[r * n + c];
                        }
                    }
                });
                self.acc(log_sigma, |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            let i = r * n + c;
                            buf[i] += g[r] * ((2.0 * ls[i]).exp() - 1.0);
                        }
                    }
                });
            }
            Op::SigmoidBce { logits, targets } => {
                let lv = self.nodes[logits.0].value.data().to_vec();
                let tv = self.nodes[targets.0].value.data().to_vec();
                self.acc(logits, |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g[k] * (kernels::sigmoid(lv[k]) - tv[k]);
                    }
                });
            }
            Op::BceProb { p, targets } => {
                let pv = self.nodes[p.0].value.data().to_vec();
                let tv = self.nodes[targets.0].value.data().to_vec();
                self.acc(p, |buf| {
                    for k in 0..buf.len() {
                        let pc = kernels::clamp_prob(pv[k]);
                        // Zero gradient in the clamped region.
                        if pv[k] == pc {
                            buf[k] += g[k] * (-tv[k] / pc + (1.0 - tv[k]) / (1.0 - pc));
                        }
                    }
                });
            }
            Op::SoftmaxXent { logits, labels } => {
                let (m, c) = self.nodes[logits.0].value.as_matrix_dims();
                let lv = self.nodes[logits.0].value.data().to_vec();
                self.acc(logits, |buf| {
                    for r in 0..m {
                        let row = &lv[r * c..(r + 1) * c];
                        let lse = kernels::log_sum_exp(row);
                        for j in 0..c {
                            let p = (row[j] - lse).exp();
                            let ind = if j == labels[r] { 1.0 } else { 0.0 };
                            buf[r * c + j] += g[r] * (p - ind);
                        }
                    }
                });
            }
            Op::ExpectileSq(u, tau) => {
                let uv = self.nodes[u.0].value.data().to_vec();
                self.acc(u, |buf| {
                    for k in 0..buf.len() {
                        let w = if uv[k] < 0.0 { 1.0 - tau } else { tau };
                        buf[k] += g[k] * 2.0 * w * uv[k];
                    }
                });
            }
            Op::Reshape(a) => {
                self.acc(a, |buf| kernels::axpy(buf, g, 1.0));
            }
        }
    }
}
