//! Reference gradient checking.
//!
//! Re-evaluates a recorded graph in f64, entirely independent of the f32
//! backward pass, and differentiates it by central differences. Coordinates
//! whose perturbation flips a branch (ReLU half, expectile side, probability
//! clamp) are reported as kinks; finite differences are meaningless across
//! those and callers skip them.

use std::collections::HashMap;

use crate::graph::{Graph, NodeId, Op};
use crate::kernels::PROB_EPS;

/// f64 forward evaluation of every node, with optional per-leaf overrides.
/// Returns node values and a branch signature for kink detection.
pub fn eval_f64(
    graph: &Graph,
    overrides: &HashMap<NodeId, Vec<f64>>,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = graph.nodes.len();
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut branches: Vec<bool> = Vec::new();
    for i in 0..n {
        let node = &graph.nodes[i];
        let v: Vec<f64> = match &node.op {
            Op::Leaf => match overrides.get(&NodeId(i)) {
                Some(o) => o.clone(),
                None => node.value.data().iter().map(|&x| x as f64).collect(),
            },
            Op::Add(a, b) => bin(&vals, *a, *b, |x, y| x + y),
            Op::Sub(a, b) => bin(&vals, *a, *b, |x, y| x - y),
            Op::Mul(a, b) => bin(&vals, *a, *b, |x, y| x * y),
            Op::Scale(a, c) => vals[a.0].iter().map(|&x| x * *c as f64).collect(),
            Op::Relu(a) => {
                let out: Vec<f64> = vals[a.0]
                    .iter()
                    .map(|&x| {
                        branches.push(x > 0.0);
                        x.max(0.0)
                    })
                    .collect();
                out
            }
            Op::Tanh(a) => vals[a.0].iter().map(|&x| x.tanh()).collect(),
            Op::Sigmoid(a) => vals[a.0].iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
            Op::Exp(a) => vals[a.0].iter().map(|&x| x.exp()).collect(),
            Op::Matmul(a, b) => {
                let (m, k) = graph.nodes[a.0].value.as_matrix_dims();
                let nn = graph.nodes[b.0].value.shape()[1];
                let av = &vals[a.0];
                let bv = &vals[b.0];
                let mut c = vec![0.0; m * nn];
                for r in 0..m {
                    for j in 0..nn {
                        let mut acc = 0.0;
                        for l in 0..k {
                            acc += av[r * k + l] * bv[l * nn + j];
                        }
                        c[r * nn + j] = acc;
                    }
                }
                c
            }
            Op::AddRowBias(a, bias) => {
                let (m, nn) = graph.nodes[a.0].value.as_matrix_dims();
                let mut out = vals[a.0].clone();
                for r in 0..m {
                    for c in 0..nn {
                        out[r * nn + c] += vals[bias.0][c];
                    }
                }
                out
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                conv2d_f64(graph, &vals, *x, *w, *b, *stride, *pad)
            }
            Op::Concat(a, b) => {
                let (m, na) = graph.nodes[a.0].value.as_matrix_dims();
                let (_, nb) = graph.nodes[b.0].value.as_matrix_dims();
                let mut out = Vec::with_capacity(m * (na + nb));
                for r in 0..m {
                    out.extend_from_slice(&vals[a.0][r * na..(r + 1) * na]);
                    out.extend_from_slice(&vals[b.0][r * nb..(r + 1) * nb]);
                }
                out
            }
            Op::Sum(a) => vec![vals[a.0].iter().sum()],
            Op::Mean(a) => {
                let nn = vals[a.0].len() as f64;
                vec![vals[a.0].iter().sum::<f64>() / nn]
            }
            Op::RowSum(a) => {
                let (m, nn) = graph.nodes[a.0].value.as_matrix_dims();
                (0..m)
                    .map(|r| vals[a.0][r * nn..(r + 1) * nn].iter().sum())
                    .collect()
            }
            Op::SelectColumn(a, col) => {
                let (m, nn) = graph.nodes[a.0].value.as_matrix_dims();
                (0..m).map(|r| vals[a.0][r * nn + col]).collect()
            }
            Op::GradReverse(a) => vals[a.0].clone(),
            Op::GaussianReparam { mu, log_sigma, noise } => {
                let m = &vals[mu.0];
                let ls = &vals[log_sigma.0];
                let e = &vals[noise.0];
                (0..m.len()).map(|k| m[k] + ls[k].exp() * e[k]).collect()
            }
            Op::KlStdNormal { mu, log_sigma } => {
                let (m, nn) = graph.nodes[mu.0].value.as_matrix_dims();
                let mv = &vals[mu.0];
                let ls = &vals[log_sigma.0];
                (0..m)
                    .map(|r| {
                        let mut acc = 0.0;
                        for c in 0..nn {
                            let i = r * nn + c;
                            acc += mv[i] * mv[i] + (2.0 * ls[i]).exp() - 1.0 - 2.0 * ls[i];
                        }
                        0.5 * acc
                    })
                    .collect()
            }
            Op::SigmoidBce { logits, targets } => {
                let l = &vals[logits.0];
                let t = &vals[targets.0];
                (0..l.len())
                    .map(|k| l[k].max(0.0) - l[k] * t[k] + (-l[k].abs()).exp().ln_1p())
                    .collect()
            }
            Op::BceProb { p, targets } => {
                let pv = &vals[p.0];
                let t = &vals[targets.0];
                (0..pv.len())
                    .map(|k| {
                        let lo = PROB_EPS as f64;
                        let pc = pv[k].clamp(lo, 1.0 - lo);
                        branches.push(pv[k] > lo && pv[k] < 1.0 - lo);
                        -t[k] * pc.ln() - (1.0 - t[k]) * (1.0 - pc).ln()
                    })
                    .collect()
            }
            Op::SoftmaxXent { logits, labels } => {
                let (m, c) = graph.nodes[logits.0].value.as_matrix_dims();
                let l = &vals[logits.0];
                (0..m)
                    .map(|r| {
                        let row = &l[r * c..(r + 1) * c];
                        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
                        lse - row[labels[r]]
                    })
                    .collect()
            }
            Op::ExpectileSq(u, tau) => vals[u.0]
                .iter()
                .map(|&x| {
                    branches.push(x < 0.0);
                    let w = if x < 0.0 { 1.0 - *tau as f64 } else { *tau as f64 };
                    w * x * x
                })
                .collect(),
            Op::Reshape(a) => vals[a.0].clone(),
        };
        vals.push(v);
    }
    (vals, branches)
}

fn bin(vals: &[Vec<f64>], a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    vals[a.0]
        .iter()
        .zip(&vals[b.0])
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn conv2d_f64(
    graph: &Graph,
    vals: &[Vec<f64>],
    x: NodeId,
    w: NodeId,
    b: NodeId,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let xs = graph.nodes[x.0].value.shape();
    let ws = graph.nodes[w.0].value.shape();
    let (n, ic, h, iw) = (xs[0], xs[1], xs[2], xs[3]);
    let (oc, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (iw + 2 * pad - kw) / stride + 1;
    let xv = &vals[x.0];
    let wv = &vals[w.0];
    let bv = &vals[b.0];
    let mut out = vec![0.0; n * oc * oh * ow];
    for img in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[o];
                    for c in 0..ic {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                acc += xv[((img * ic + c) * h + iy as usize) * iw + ix as usize]
                                    * wv[((o * ic + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((img * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// One coordinate's finite-difference result.
pub enum FdCoord {
    /// Central-difference estimate of d(loss)/d(coord).
    Grad(f64),
    /// Perturbation crossed a branch; estimate is unusable.
    Kink,
}

/// Central differences of the recorded loss with respect to one leaf,
/// evaluated on the f64 re-implementation.
pub fn central_diff(graph: &Graph, loss: NodeId, leaf: NodeId, h: f64) -> Vec<FdCoord> {
    let base: Vec<f64> = graph
        .value(leaf)
        .data()
        .iter()
        .map(|&x| x as f64)
        .collect();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += h;
        let mut minus = base.clone();
        minus[k] -= h;
        let mut ov = HashMap::new();
        ov.insert(leaf, plus);
        let (vp, bp) = eval_f64(graph, &ov);
        let mut ov = HashMap::new();
        ov.insert(leaf, minus);
        let (vm, bm) = eval_f64(graph, &ov);
        if bp != bm {
            out.push(FdCoord::Kink);
            continue;
        }
        out.push(FdCoord::Grad((vp[loss.0][0] - vm[loss.0][0]) / (2.0 * h)));
    }
    out
}

/// Relative error between autodiff and finite-difference gradients for one
/// leaf. Coordinates are measured against `max(|ad|, |fd|)` floored at a
/// small fraction of the leaf's largest gradient, so near-zero coordinates
/// are judged on the leaf's scale instead of amplifying f32 roundoff.
/// Returns (errors, kinks_skipped).
pub fn relative_errors(
    graph: &Graph,
    loss: NodeId,
    leaf: NodeId,
    h: f64,
) -> (Vec<f64>, usize) {
    let ad = graph.grad_or_zeros(leaf);
    let fd = central_diff(graph, loss, leaf, h);
    let scale = fd
        .iter()
        .filter_map(|f| match f {
            FdCoord::Grad(g) => Some(g.abs()),
            FdCoord::Kink => None,
        })
        .fold(0.0f64, f64::max);
    let floor = (0.02 * scale).max(1e-6);
    let mut errs = Vec::new();
    let mut kinks = 0;
    for (a, f) in ad.iter().zip(fd) {
        match f {
            FdCoord::Kink => kinks += 1,
            FdCoord::Grad(g) => {
                let a = *a as f64;
                let denom = a.abs().max(g.abs()).max(floor);
                errs.push((a - g).abs() / denom);
            }
        }
    }
    (errs, kinks)
}
