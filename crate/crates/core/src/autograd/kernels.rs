//! Numeric kernels behind the tape ops.
//!
//! All kernels are plain f64 loops over row-major buffers, written so the
//! innermost loop runs over contiguous slices (LLVM vectorizes the
//! multiply-add patterns). No BLAS; desk scale keeps this fast enough and
//! bit-reproducible.

/// c = a(m x k) * b(k x n)
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, m, k, n, &mut c);
    c
}

/// c += a(m x k) * b(k x n)
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += aik * bv;
            }
        }
    }
}

/// c(m x k) += a(m x n) * b(k x n)^T, i.e. rows of `b` are dotted against
/// rows of `a`. Dot products use 8 independent accumulator lanes so the
/// reduction vectorizes.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (kk, cv) in c_row.iter_mut().enumerate() {
            *cv += dot(a_row, &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// c(k x n) += a(m x k)^T * b(m x n).
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += aik * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for (xa, xb) in a
        .chunks_exact(LANES)
        .zip(b.chunks_exact(LANES))
        .take(chunks)
    {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in a[chunks * LANES..].iter().zip(b[chunks * LANES..].iter()) {
        s += x * y;
    }
    s
}

/// Shape bookkeeping for conv2d: (out_h, out_w), checked by the caller.
pub fn conv2d_out_dim(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return None;
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return None;
    }
    Some(span / stride + 1)
}

/// Cross-correlation with zero padding.
/// x: (n, c, h, w), k: (o, c, kh, kw), bias: (o) -> y: (n, o, ho, wo)
/// Copy one sample's padded receptive fields into a (C*kh*kw, Ho*Wo)
/// column matrix so convolution becomes a matmul.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    col.fill(0.0);
    for ci in 0..c {
        let x_plane = &x[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut col[((ci * kh + i) * kw + j) * ho * wo..][..ho * wo];
                for hi in 0..ho {
                    let ih = hi * stride + i;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let x_row = &x_plane[(ih - pad) * w..(ih - pad + 1) * w];
                    let out_row = &mut row[hi * wo..(hi + 1) * wo];
                    // valid output positions: pad <= wi*stride + j < w + pad
                    let wi0 = pad.saturating_sub(j).div_ceil(stride);
                    for (wi, ov) in out_row.iter_mut().enumerate().skip(wi0) {
                        let iw = wi * stride + j;
                        if iw >= w + pad {
                            break;
                        }
                        *ov = x_row[iw - pad];
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-matrix gradient back into an input-shaped buffer
/// (the adjoint of `im2col`).
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    dcol: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    for ci in 0..c {
        let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &dcol[((ci * kh + i) * kw + j) * ho * wo..][..ho * wo];
                for hi in 0..ho {
                    let ih = hi * stride + i;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let dx_row = &mut dx_plane[(ih - pad) * w..(ih - pad + 1) * w];
                    let in_row = &row[hi * wo..(hi + 1) * wo];
                    let wi0 = pad.saturating_sub(j).div_ceil(stride);
                    for (wi, &gv) in in_row.iter().enumerate().skip(wi0) {
                        let iw = wi * stride + j;
                        if iw >= w + pad {
                            break;
                        }
                        dx_row[iw - pad] += gv;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding, lowered to per-sample matmuls over
/// an im2col buffer.
/// x: (n, c, h, w), k: (o, c, kh, kw), bias: (o) -> y: (n, o, ho, wo)
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; n * o * ho * wo];
    let mut col = vec![0.0; c * kh * kw * ho * wo];
    for ni in 0..n {
        im2col(&x[ni * c * h * w..], c, h, w, kh, kw, pad, stride, ho, wo, &mut col);
        let y_n = &mut y[ni * o * ho * wo..(ni + 1) * o * ho * wo];
        for (oi, y_plane) in y_n.chunks_exact_mut(ho * wo).enumerate() {
            y_plane.fill(bias[oi]);
        }
        matmul_acc(k, &col, o, c * kh * kw, ho * wo, y_n);
    }
    y
}

/// Backward of conv2d. Accumulates into dx, dk, dbias (any may be None).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    dy: &[f64],
    x: &[f64],
    k: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
) {
    if let Some(db) = dbias.as_deref_mut() {
        for ni in 0..n {
            for oi in 0..o {
                let dy_plane = &dy[(ni * o + oi) * ho * wo..(ni * o + oi + 1) * ho * wo];
                db[oi] += dy_plane.iter().sum::<f64>();
            }
        }
    }
    if dx.is_none() && dk.is_none() {
        return;
    }
    let patch = c * kh * kw;
    let mut col = vec![0.0; patch * ho * wo];
    let mut dcol = vec![0.0; patch * ho * wo];
    for ni in 0..n {
        let dy_n = &dy[ni * o * ho * wo..(ni + 1) * o * ho * wo];
        if let Some(dkp) = dk.as_deref_mut() {
            // dK += dY_n * col_n^T
            im2col(&x[ni * c * h * w..], c, h, w, kh, kw, pad, stride, ho, wo, &mut col);
            matmul_nt_acc(dy_n, &col, o, ho * wo, patch, dkp);
        }
        if let Some(dxp) = dx.as_deref_mut() {
            // dcol = K^T * dY_n, scattered back through col2im
            dcol.fill(0.0);
            matmul_tn_acc(k, dy_n, o, patch, ho * wo, &mut dcol);
            col2im_acc(
                &dcol,
                c,
                h,
                w,
                kh,
                kw,
                pad,
                stride,
                ho,
                wo,
                &mut dxp[ni * c * h * w..(ni + 1) * c * h * w],
            );
        }
    }
}

/// Numerically stable log-softmax over rows of length `l`.
pub fn log_softmax(x: &[f64], l: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (xr, yr) in x.chunks_exact(l).zip(y.chunks_exact_mut(l)) {
        let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in xr {
            sum += (v - max).exp();
        }
        let log_z = max + sum.ln();
        for (yv, &xv) in yr.iter_mut().zip(xr.iter()) {
            *yv = xv - log_z;
        }
    }
    y
}

/// dx += dy - softmax(x) * sum(dy) per row, where y = log_softmax(x).
pub fn log_softmax_backward(dy: &[f64], y: &[f64], l: usize, dx: &mut [f64]) {
    for ((dy_r, y_r), dx_r) in dy
        .chunks_exact(l)
        .zip(y.chunks_exact(l))
        .zip(dx.chunks_exact_mut(l))
    {
        let s: f64 = dy_r.iter().sum();
        for ((dxv, &dyv), &yv) in dx_r.iter_mut().zip(dy_r.iter()).zip(y_r.iter()) {
            *dxv += dyv - yv.exp() * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = [1.0, 0.0, 0.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(matmul(&i2, &b, 2, 2, 2), b.to_vec());
    }

    #[test]
    fn nt_and_tn_match_plain_matmul() {
        // c = a * b computed via the transposed-operand kernels
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 0.5).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.25 - 1.0).collect(); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);

        // a * b == a * (b^T)^T: build b^T manually and use nt
        let mut bt = vec![0.0; 12]; // 4x3
        for r in 0..3 {
            for col in 0..4 {
                bt[col * 3 + r] = b[r * 4 + col];
            }
        }
        let mut c_nt = vec![0.0; 8];
        matmul_nt_acc(&a, &bt, 2, 3, 4, &mut c_nt);
        for (x, y) in c.iter().zip(c_nt.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // a * b == (a^T)^T * b: build a^T and use tn
        let mut at = vec![0.0; 6]; // 3x2
        for r in 0..2 {
            for col in 0..3 {
                at[col * 2 + r] = a[r * 3 + col];
            }
        }
        let mut c_tn = vec![0.0; 8];
        matmul_tn_acc(&at, &b, 3, 2, 4, &mut c_tn);
        for (x, y) in c.iter().zip(c_tn.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Direct quadruple-loop convolution, the oracle for the im2col path.
    #[allow(clippy::too_many_arguments)]
    fn conv2d_naive(
        x: &[f64],
        k: &[f64],
        bias: &[f64],
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        o: usize,
        kh: usize,
        kw: usize,
        pad: usize,
        stride: usize,
        ho: usize,
        wo: usize,
    ) -> Vec<f64> {
        let mut y = vec![0.0; n * o * ho * wo];
        for ni in 0..n {
            for oi in 0..o {
                for hi in 0..ho {
                    for wi in 0..wo {
                        let mut acc = bias[oi];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ih = hi * stride + i;
                                    let iw = wi * stride + j;
                                    if ih < pad || iw < pad || ih >= h + pad || iw >= w + pad {
                                        continue;
                                    }
                                    acc += k[((oi * c + ci) * kh + i) * kw + j]
                                        * x[((ni * c + ci) * h + ih - pad) * w + iw - pad];
                                }
                            }
                        }
                        y[((ni * o + oi) * ho + hi) * wo + wi] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        // odd geometry: rectangular input, pad 1, stride 2, 3x3 kernel
        let (n, c, h, w, o, kh, kw, pad, stride) = (2, 3, 5, 7, 4, 3, 3, 1, 2);
        let ho = conv2d_out_dim(h, kh, pad, stride).unwrap();
        let wo = conv2d_out_dim(w, kw, pad, stride).unwrap();
        let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect();
        let k: Vec<f64> = (0..o * c * kh * kw).map(|i| ((i * 53 % 97) as f64) / 48.0 - 1.0).collect();
        let bias: Vec<f64> = (0..o).map(|i| i as f64 * 0.1).collect();
        let fast = conv2d(&x, &k, &bias, n, c, h, w, o, kh, kw, pad, stride, ho, wo);
        let slow = conv2d_naive(&x, &k, &bias, n, c, h, w, o, kh, kw, pad, stride, ho, wo);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_out_dims() {
        assert_eq!(conv2d_out_dim(64, 3, 1, 1), Some(64));
        assert_eq!(conv2d_out_dim(64, 2, 0, 2), Some(32));
        // 3x3 stride-2 on even sizes does not divide evenly
        assert_eq!(conv2d_out_dim(64, 3, 1, 2), None);
        assert_eq!(conv2d_out_dim(3, 5, 0, 1), None);
    }
}
