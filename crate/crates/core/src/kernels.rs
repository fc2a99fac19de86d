//! Forward and backward kernels on NCHW tensors.
//!
//! These are plain functions; [`crate::autograd`] records them on a tape.

use crate::tensor::{gemm, Scalar, Tensor};

/// Upper bound on im2col buffer elements before the batch is split.
const COLS_BUDGET: usize = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

fn im2col<S: Scalar>(
    x: &[S],
    (c, h, w): (usize, usize, usize),
    g: ConvGeom,
    cols: &mut [S],
    col_stride: usize,
    col_offset: usize,
) {
    let (ho, wo) = (g.out_dim(h), g.out_dim(w));
    let k = g.kernel;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * col_stride + col_offset..][..ho * wo];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        out_row.fill(S::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *o = if iw < 0 || iw >= w as isize {
                            S::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(
    cols: &[S],
    (c, h, w): (usize, usize, usize),
    g: ConvGeom,
    dx: &mut [S],
    col_stride: usize,
    col_offset: usize,
) {
    let (ho, wo) = (g.out_dim(h), g.out_dim(w));
    let k = g.kernel;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * col_stride + col_offset..][..ho * wo];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn batch_groups(n: usize, per_sample: usize) -> impl Iterator<Item = (usize, usize)> {
    let group = (COLS_BUDGET / per_sample.max(1)).clamp(1, n.max(1));
    (0..n).step_by(group).map(move |s| (s, (s + group).min(n)))
}

/// Zero-padded 2-D convolution. `x: [N,C,H,W]`, `w: [O,C,k,k]`, `b: [O]`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    g: ConvGeom,
) -> Tensor<S> {
    let (n, c, h, wd) = x.dims4();
    let (o, wc, kh, kw) = w.dims4();
    assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
    assert!(
        kh == g.kernel && kw == g.kernel,
        "conv2d: kernel size mismatch"
    );
    let (ho, wo) = (g.out_dim(h), g.out_dim(wd));
    let p = ho * wo;
    let kk = c * g.kernel * g.kernel;
    let mut out = Tensor::zeros(&[n, o, ho, wo]);
    let in_per = c * h * wd;
    for (s, e) in batch_groups(n, kk * p) {
        let ng = e - s;
        let cols_n = ng * p;
        let mut cols = vec![S::zero(); kk * cols_n];
        for i in 0..ng {
            let xi = &x.data()[(s + i) * in_per..(s + i + 1) * in_per];
            im2col(xi, (c, h, wd), g, &mut cols, cols_n, i * p);
        }
        let mut out_t = vec![S::zero(); o * cols_n];
        gemm(
            false,
            false,
            o,
            cols_n,
            kk,
            S::one(),
            w.data(),
            &cols,
            S::zero(),
            &mut out_t,
        );
        let od = out.data_mut();
        for i in 0..ng {
            for oc in 0..o {
                let bias = b.map_or(S::zero(), |b| b.data()[oc]);
                let src = &out_t[oc * cols_n + i * p..][..p];
                let dst = &mut od[((s + i) * o + oc) * p..][..p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bias;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`]: `(dx, dw, db)`. `dx` is skipped unless requested.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Tensor<S>) {
    let (n, c, h, wd) = x.dims4();
    let (o, _, _, _) = w.dims4();
    let (_, _, ho, wo) = dy.dims4();
    let p = ho * wo;
    let kk = c * g.kernel * g.kernel;
    let in_per = c * h * wd;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[o]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for (s, e) in batch_groups(n, kk * p) {
        let ng = e - s;
        let cols_n = ng * p;
        let mut cols = vec![S::zero(); kk * cols_n];
        for i in 0..ng {
            let xi = &x.data()[(s + i) * in_per..(s + i + 1) * in_per];
            im2col(xi, (c, h, wd), g, &mut cols, cols_n, i * p);
        }
        let mut dy_t = vec![S::zero(); o * cols_n];
        for i in 0..ng {
            for oc in 0..o {
                let src = &dy.data()[((s + i) * o + oc) * p..][..p];
                dy_t[oc * cols_n + i * p..][..p].copy_from_slice(src);
            }
        }
        for oc in 0..o {
            let row: S = dy_t[oc * cols_n..(oc + 1) * cols_n].iter().copied().sum();
            db.data_mut()[oc] += row;
        }
        gemm(
            false,
            true,
            o,
            kk,
            cols_n,
            S::one(),
            &dy_t,
            &cols,
            S::one(),
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            let mut dcols = cols;
            gemm(
                true,
                false,
                kk,
                cols_n,
                o,
                S::one(),
                w.data(),
                &dy_t,
                S::zero(),
                &mut dcols,
            );
            for i in 0..ng {
                let dxi = &mut dx.data_mut()[(s + i) * in_per..(s + i + 1) * in_per];
                col2im(&dcols, (c, h, wd), g, dxi, cols_n, i * p);
            }
        }
    }
    (dx, dw, db)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Reflection padding by `pad` on every spatial border. Requires `pad < H, W`.
pub fn reflect_pad<S: Scalar>(x: &Tensor<S>, pad: usize) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    assert!(
        pad < h && pad < w,
        "reflect_pad: pad {pad} too large for {h}x{w}"
    );
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, hp, wp]);
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        let dst = &mut od[plane * hp * wp..][..hp * wp];
        for i in 0..hp {
            let si = reflect(i as isize - pad as isize, h);
            for j in 0..wp {
                let sj = reflect(j as isize - pad as isize, w);
                dst[i * wp + j] = src[si * w + sj];
            }
        }
    }
    out
}

pub fn reflect_pad_backward<S: Scalar>(
    dy: &Tensor<S>,
    pad: usize,
    in_shape: &[usize],
) -> Tensor<S> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (n, c, hp, wp) = dy.dims4();
    let mut dx = Tensor::zeros(in_shape);
    let dd = dx.data_mut();
    for plane in 0..n * c {
        let src = &dy.data()[plane * hp * wp..][..hp * wp];
        let dst = &mut dd[plane * h * w..][..h * w];
        for i in 0..hp {
            let si = reflect(i as isize - pad as isize, h);
            for j in 0..wp {
                let sj = reflect(j as isize - pad as isize, w);
                dst[si * w + sj] += src[i * wp + j];
            }
        }
    }
    dx
}

/// Per-(sample, channel) normalization over spatial positions.
/// Returns the normalized map and `1/sqrt(var + eps)` per plane.
pub fn instance_norm<S: Scalar>(x: &Tensor<S>, eps: S) -> (Tensor<S>, Vec<S>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let count = S::from_f64(hw as f64);
    let mut out = Tensor::zeros(x.shape());
    let mut inv = Vec::with_capacity(n * c);
    for plane in 0..n * c {
        let src = &x.data()[plane * hw..][..hw];
        let mean = src.iter().copied().sum::<S>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / count;
        let is = (var + eps).sqrt().recip();
        inv.push(is);
        for (d, &v) in out.data_mut()[plane * hw..][..hw].iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    (out, inv)
}

pub fn instance_norm_backward<S: Scalar>(y: &Tensor<S>, inv: &[S], dy: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = y.dims4();
    let hw = h * w;
    let count = S::from_f64(hw as f64);
    let mut dx = Tensor::zeros(y.shape());
    for plane in 0..n * c {
        let yp = &y.data()[plane * hw..][..hw];
        let gp = &dy.data()[plane * hw..][..hw];
        let mean_g = gp.iter().copied().sum::<S>() / count;
        let mean_gy = gp.iter().zip(yp).map(|(&g, &v)| g * v).sum::<S>() / count;
        for ((d, &g), &v) in dx.data_mut()[plane * hw..][..hw].iter_mut().zip(gp).zip(yp) {
            *d = inv[plane] * (g - mean_g - v * mean_gy);
        }
    }
    dx
}

/// `y = x * gamma + beta` per channel; `gamma`, `beta` are `[1, C]` (shared)
/// or `[N, C]` (per sample).
pub fn scale_shift<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let per_sample = affine_rows(gamma, beta, n, c);
    let mut out = Tensor::zeros(x.shape());
    for s in 0..n {
        let row = if per_sample { s } else { 0 };
        for ch in 0..c {
            let (gm, bt) = (gamma.data()[row * c + ch], beta.data()[row * c + ch]);
            let plane = (s * c + ch) * hw;
            for (d, &v) in out.data_mut()[plane..plane + hw]
                .iter_mut()
                .zip(&x.data()[plane..plane + hw])
            {
                *d = v * gm + bt;
            }
        }
    }
    out
}

fn affine_rows<S: Scalar>(gamma: &Tensor<S>, beta: &Tensor<S>, n: usize, c: usize) -> bool {
    let (gr, gc) = gamma.dims2();
    assert_eq!(
        gamma.shape(),
        beta.shape(),
        "scale_shift: gamma/beta shape mismatch"
    );
    assert_eq!(
        gc, c,
        "scale_shift: {gc} affine channels for {c} feature channels"
    );
    assert!(
        gr == 1 || gr == n,
        "scale_shift: {gr} affine rows for batch {n}"
    );
    gr == n && n != 1
}

pub fn scale_shift_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let per_sample = affine_rows(gamma, gamma, n, c);
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(gamma.shape());
    let mut dbt = Tensor::zeros(gamma.shape());
    for s in 0..n {
        let row = if per_sample { s } else { 0 };
        for ch in 0..c {
            let gm = gamma.data()[row * c + ch];
            let plane = (s * c + ch) * hw;
            let xs = &x.data()[plane..plane + hw];
            let gs = &dy.data()[plane..plane + hw];
            let mut sg = S::zero();
            let mut sgx = S::zero();
            for ((d, &g), &v) in dx.data_mut()[plane..plane + hw].iter_mut().zip(gs).zip(xs) {
                *d = g * gm;
                sg += g;
                sgx += g * v;
            }
            dg.data_mut()[row * c + ch] += sgx;
            dbt.data_mut()[row * c + ch] += sg;
        }
    }
    (dx, dg, dbt)
}

pub fn upsample_nearest2x<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        let dst = &mut od[plane * 4 * h * w..][..4 * h * w];
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (n, c, h2, w2) = dy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let dd = dx.data_mut();
    for plane in 0..n * c {
        let src = &dy.data()[plane * h2 * w2..][..h2 * w2];
        let dst = &mut dd[plane * h * w..][..h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    dx
}

/// 2x2 max pooling with stride 2; returns argmax offsets for the backward pass.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        for i in 0..ho {
            for j in 0..wo {
                let mut best = 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * i + di) * w + 2 * j + dj;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = plane * ho * wo + i * wo + j;
                out.data_mut()[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<S: Scalar>(dy: &Tensor<S>, arg: &[u32], in_shape: &[usize]) -> Tensor<S> {
    let (n, c, ho, wo) = dy.dims4();
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        for k in 0..ho * wo {
            let o = plane * ho * wo + k;
            dx.data_mut()[plane * h * w + arg[o] as usize] += dy.data()[o];
        }
    }
    dx
}

/// 2x2 average pooling with stride 2 (odd trailing rows/cols dropped).
pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        for i in 0..ho {
            for j in 0..wo {
                let s = src[2 * i * w + 2 * j]
                    + src[2 * i * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1];
                out.data_mut()[plane * ho * wo + i * wo + j] = s * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(dy: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let (n, c, ho, wo) = dy.dims4();
    let (h, w) = (in_shape[2], in_shape[3]);
    let quarter = S::from_f64(0.25);
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let g = dy.data()[plane * ho * wo + i * wo + j] * quarter;
                let base = plane * h * w;
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dx.data_mut()[base + (2 * i + di) * w + 2 * j + dj] += g;
                }
            }
        }
    }
    dx
}

/// Normalized Gram matrix per sample: `G[a,b] = sum_p F[a,p] F[b,p] / (C*H*W)`.
pub fn gram<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let norm = S::from_f64(1.0 / (c * p) as f64);
    let mut out = Tensor::zeros(&[n, c, c]);
    for s in 0..n {
        let f = &x.data()[s * c * p..][..c * p];
        gemm(
            false,
            true,
            c,
            c,
            p,
            norm,
            f,
            f,
            S::zero(),
            &mut out.data_mut()[s * c * c..][..c * c],
        );
        // gemm accumulates in a different order for (a,b) and (b,a)
        let g = &mut out.data_mut()[s * c * c..][..c * c];
        for a in 0..c {
            for b in a + 1..c {
                g[b * c + a] = g[a * c + b];
            }
        }
    }
    out
}

pub fn gram_backward<S: Scalar>(x: &Tensor<S>, dg: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let norm = S::from_f64(1.0 / (c * p) as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut sym = vec![S::zero(); c * c];
    for s in 0..n {
        let g = &dg.data()[s * c * c..][..c * c];
        for a in 0..c {
            for b in 0..c {
                sym[a * c + b] = g[a * c + b] + g[b * c + a];
            }
        }
        let f = &x.data()[s * c * p..][..c * p];
        gemm(
            false,
            false,
            c,
            p,
            c,
            norm,
            &sym,
            f,
            S::zero(),
            &mut dx.data_mut()[s * c * p..][..c * p],
        );
    }
    dx
}

/// `x: [N, I]`, `w: [I, O]`, `b: [O]` -> `[N, O]`.
pub fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (n, i) = x.dims2();
    let (wi, o) = w.dims2();
    assert_eq!(i, wi, "linear: input width {i} vs weight rows {wi}");
    let mut out = Tensor::zeros(&[n, o]);
    for r in 0..n {
        out.data_mut()[r * o..(r + 1) * o].copy_from_slice(b.data());
    }
    gemm(
        false,
        false,
        n,
        o,
        i,
        S::one(),
        x.data(),
        w.data(),
        S::one(),
        out.data_mut(),
    );
    out
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, i) = x.dims2();
    let (_, o) = w.dims2();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[o]);
    gemm(
        false,
        true,
        n,
        i,
        o,
        S::one(),
        dy.data(),
        w.data(),
        S::zero(),
        dx.data_mut(),
    );
    gemm(
        true,
        false,
        i,
        o,
        n,
        S::one(),
        x.data(),
        dy.data(),
        S::zero(),
        dw.data_mut(),
    );
    for r in 0..n {
        for (d, &g) in db.data_mut().iter_mut().zip(&dy.data()[r * o..(r + 1) * o]) {
            *d += g;
        }
    }
    (dx, dw, db)
}
