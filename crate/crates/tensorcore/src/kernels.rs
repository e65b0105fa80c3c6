//! Dense f32 kernels behind the graph ops. Matrix products go through
//! `matrixmultiply::sgemm`, which picks an AVX/FMA microkernel at runtime
//! and is bitwise deterministic for a given build and input.

use crate::tensor::Tensor;

pub(crate) fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("map preserves shape")
}

pub(crate) fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip preserves shape")
}

/// `buf += alpha * g`
pub(crate) fn axpy(buf: &mut [f32], g: &[f32], alpha: f32) {
    debug_assert_eq!(buf.len(), g.len());
    for (b, &v) in buf.iter_mut().zip(g) {
        *b += alpha * v;
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) const PROB_EPS: f32 = 1e-7;

pub(crate) fn clamp_prob(p: f32) -> f32 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub(crate) fn log_sum_exp(row: &[f32]) -> f32 {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let s: f32 = row.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// C[m,n] = A[m,k] . B[k,n], all row-major.
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// C[m,k] = A[m,n] . B[k,n]^T
pub(crate) fn matmul_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * k];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            n,
            k,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    c
}

/// C[k,n] = A[m,k]^T . B[m,n]
pub(crate) fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; k * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::sgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

pub(crate) fn conv_out_dim(i: usize, k: usize, stride: usize, pad: usize) -> usize {
    (i + 2 * pad - k) / stride + 1
}

/// Gathers conv patches for the whole batch: rows are output positions in
/// (image, oy, ox) order, columns are (ic, ky, kx). Out-of-bounds reads
/// under padding contribute zeros.
fn im2col(
    x: &[f32],
    n: usize,
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let kdim = ic * kh * kw;
    let mut col = vec![0.0f32; n * oh * ow * kdim];
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((img * oh + oy) * ow + ox) * kdim;
                for c in 0..ic {
                    let xbase = (img * ic + c) * h * w;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            col[row + (c * kh + ky) * kw + kx] =
                                x[xbase + iy * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    (col, oh, ow)
}

/// Scatter of `im2col`'s adjoint: accumulates column gradients back into
/// the input layout.
fn col2im(
    dcol: &[f32],
    n: usize,
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let kdim = ic * kh * kw;
    let mut dx = vec![0.0f32; n * ic * h * w];
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((img * oh + oy) * ow + ox) * kdim;
                for c in 0..ic {
                    let xbase = (img * ic + c) * h * w;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[xbase + iy * w + ix as usize] +=
                                dcol[row + (c * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, ic, h, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (col, oh, ow) = im2col(x.data(), n, ic, h, iw, kh, kw, stride, pad);
    let kdim = ic * kh * kw;
    let rows = n * oh * ow;
    // [rows, kdim] . [oc, kdim]^T -> [rows, oc]
    let prod = matmul_nt(&col, w.data(), rows, kdim, oc);
    let mut out = vec![0.0f32; n * oc * oh * ow];
    let ohw = oh * ow;
    for img in 0..n {
        for p in 0..ohw {
            let src = (img * ohw + p) * oc;
            for c in 0..oc {
                out[(img * oc + c) * ohw + p] = prod[src + c] + bias[c];
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out).expect("conv output shape")
}

/// Rearranges an NCHW gradient to rows of output positions x channels.
fn grad_to_rows(g: &[f32], n: usize, oc: usize, ohw: usize) -> Vec<f32> {
    let mut rows = vec![0.0f32; n * ohw * oc];
    for img in 0..n {
        for c in 0..oc {
            let base = (img * oc + c) * ohw;
            for p in 0..ohw {
                rows[(img * ohw + p) * oc + c] = g[base + p];
            }
        }
    }
    rows
}

pub(crate) fn conv2d_backward_input(
    w: &Tensor,
    g: &[f32],
    oshape: &[usize],
    xshape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let (n, oc, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let (ic, h, iw) = (xshape[1], xshape[2], xshape[3]);
    let (kh, kw) = (w.shape()[2], w.shape()[3]);
    let kdim = ic * kh * kw;
    let rows = grad_to_rows(g, n, oc, oh * ow);
    // dcol [n*ohw, kdim] = rows [n*ohw, oc] . W [oc, kdim]
    let dcol = matmul(&rows, w.data(), n * oh * ow, oc, kdim);
    col2im(&dcol, n, ic, h, iw, kh, kw, stride, pad, oh, ow)
}

pub(crate) fn conv2d_backward_weight(
    x: &Tensor,
    g: &[f32],
    oshape: &[usize],
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let (n, oc, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let (ic, h, iw) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (wshape[2], wshape[3]);
    let (col, _, _) = im2col(x.data(), n, ic, h, iw, kh, kw, stride, pad);
    let rows = grad_to_rows(g, n, oc, oh * ow);
    // dW [oc, kdim] = rows^T [oc, n*ohw] . col [n*ohw, kdim]
    matmul_tn(&rows, &col, n * oh * ow, oc, ic * kh * kw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] . [[5,6],[7,8]] = [[19,22],[43,50]]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transposed_variants() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 2.0, 1.0, 0.0, 1.0]; // 2x3 for nt
        // A[2,3] . B[2,3]^T -> [2,2]
        let c = matmul_nt(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![7.0, 4.0, 16.0, 10.0]);
        // A[2,3]^T . B[2,3] -> [3,3] with A as [m=2,k=3]
        let t = matmul_tn(&a, &b, 2, 3, 3);
        assert_eq!(t[0], 1.0 * 1.0 + 4.0 * 1.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], 1, 0);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), x.data());
    }
}
