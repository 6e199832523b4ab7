//! Forward and backward kernels for the heavier graph operations.

use crate::tensor::gemm;

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * (-0.5 * x * x).exp() / SQRT_2PI
}

/// Layer normalization over the last axis. Returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv[r] = is;
        for c in 0..cols {
            let h = (row[c] - mean) * is;
            xhat[r * cols + c] = h;
            y[r * cols + c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, inv)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv: &[f64],
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cols = gamma.len();
    let rows = dy.len() / cols;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let off = r * cols;
        let (mut s1, mut s2) = (0.0, 0.0);
        for c in 0..cols {
            let g = dy[off + c];
            dgamma[c] += g * xhat[off + c];
            dbeta[c] += g;
            dxhat[c] = g * gamma[c];
            s1 += dxhat[c];
            s2 += dxhat[c] * xhat[off + c];
        }
        let n = cols as f64;
        for c in 0..cols {
            dx[off + c] = inv[r] / n * (n * dxhat[c] - s1 - xhat[off + c] * s2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Global response normalization of a `frames × channels` map, aggregating
/// each channel's L2 norm over frames. Returns `(y, norms)`.
pub(crate) fn grn(
    h: &[f64],
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let frames = h.len() / channels;
    let mut g = vec![0.0; channels];
    for f in 0..frames {
        for c in 0..channels {
            g[c] += h[f * channels + c].powi(2);
        }
    }
    g.iter_mut().for_each(|v| *v = v.sqrt());
    let denom = g.iter().sum::<f64>() / channels as f64 + eps;
    let mut y = vec![0.0; h.len()];
    for f in 0..frames {
        for c in 0..channels {
            let i = f * channels + c;
            y[i] = gamma[c] * h[i] * (g[c] / denom) + beta[c] + h[i];
        }
    }
    (y, g)
}

/// Returns `(dh, dgamma, dbeta)`.
pub(crate) fn grn_backward(
    dy: &[f64],
    h: &[f64],
    norms: &[f64],
    gamma: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let frames = h.len() / channels;
    let c_f = channels as f64;
    let denom = norms.iter().sum::<f64>() / c_f + eps;
    let n: Vec<f64> = norms.iter().map(|g| g / denom).collect();
    let mut dh = vec![0.0; h.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    let mut dn = vec![0.0; channels];
    for f in 0..frames {
        for c in 0..channels {
            let i = f * channels + c;
            dgamma[c] += dy[i] * h[i] * n[c];
            dbeta[c] += dy[i];
            dn[c] += dy[i] * gamma[c] * h[i];
            dh[i] = dy[i] * (gamma[c] * n[c] + 1.0);
        }
    }
    // n_c = g_c / (mean(g) + eps)
    let cross: f64 = dn.iter().zip(norms).map(|(d, g)| d * g).sum::<f64>() / (denom * denom * c_f);
    let dg: Vec<f64> = dn.iter().map(|d| d / denom - cross).collect();
    for f in 0..frames {
        for c in 0..channels {
            if norms[c] > 0.0 {
                let i = f * channels + c;
                dh[i] += dg[c] * h[i] / norms[c];
            }
        }
    }
    (dh, dgamma, dbeta)
}

/// Per-channel 1-D convolution along frames with zero "same" padding.
/// `x` is `frames × channels`, `w` is `channels × taps`.
pub(crate) fn depthwise_conv1d(x: &[f64], channels: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let frames = x.len() / channels;
    let taps = w.len() / channels;
    let half = (taps / 2) as isize;
    let mut y = vec![0.0; x.len()];
    for f in 0..frames {
        for c in 0..channels {
            let mut acc = b[c];
            for j in 0..taps {
                let src = f as isize + j as isize - half;
                if src >= 0 && (src as usize) < frames {
                    acc += w[c * taps + j] * x[src as usize * channels + c];
                }
            }
            y[f * channels + c] = acc;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn depthwise_conv1d_backward(
    dy: &[f64],
    x: &[f64],
    channels: usize,
    w: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let frames = x.len() / channels;
    let taps = w.len() / channels;
    let half = (taps / 2) as isize;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; channels];
    for f in 0..frames {
        for c in 0..channels {
            let g = dy[f * channels + c];
            db[c] += g;
            for j in 0..taps {
                let src = f as isize + j as isize - half;
                if src >= 0 && (src as usize) < frames {
                    let s = src as usize * channels + c;
                    dw[c * taps + j] += g * x[s];
                    dx[s] += g * w[c * taps + j];
                }
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding.0).saturating_sub(self.kernel.0) / self.stride.0 + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding.1).saturating_sub(self.kernel.1) / self.stride.1 + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Output columns `lo..hi` whose kernel tap `j` lands inside the input
    /// along an axis of `len` samples.
    fn valid_range(out: usize, stride: usize, tap: usize, pad: usize, len: usize) -> (usize, usize) {
        let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
        let hi = if len + pad > tap { ((len + pad - tap - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Calls `f(col_offset, src_offset, count, src_step)` for each run of
    /// consecutive output positions along the width axis.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (kh, kw) = self.kernel;
        let (oh, ow) = (self.out_height(), self.out_width());
        let p = oh * ow;
        for ci in 0..self.in_channels {
            for i in 0..kh {
                let (ylo, yhi) = Self::valid_range(oh, self.stride.0, i, self.padding.0, self.height);
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    let (xlo, xhi) = Self::valid_range(ow, self.stride.1, j, self.padding.1, self.width);
                    if xlo >= xhi {
                        continue;
                    }
                    for y in ylo..yhi {
                        let sy = y * self.stride.0 + i - self.padding.0;
                        let sx = xlo * self.stride.1 + j - self.padding.1;
                        f(
                            row * p + y * ow + xlo,
                            (ci * self.height + sy) * self.width + sx,
                            xhi - xlo,
                            self.stride.1,
                        );
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.patch() * self.positions()];
        self.for_each_run(|dst, src, n, step| {
            let out = &mut cols[dst..dst + n];
            if step == 1 {
                out.copy_from_slice(&x[src..src + n]);
            } else {
                out.iter_mut().enumerate().for_each(|(k, v)| *v = x[src + k * step]);
            }
        });
        cols
    }

    fn col2im(&self, dcols: &[f64], dx: &mut [f64]) {
        self.for_each_run(|dst, src, n, step| {
            for (k, &g) in dcols[dst..dst + n].iter().enumerate() {
                dx[src + k * step] += g;
            }
        });
    }
}

pub(crate) fn conv2d(geo: &Conv2dGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let p = geo.positions();
    let cols = geo.im2col(x);
    let mut y = vec![0.0; geo.out_channels * p];
    for (co, chunk) in y.chunks_mut(p).enumerate() {
        chunk.iter_mut().for_each(|v| *v = b[co]);
    }
    gemm(geo.out_channels, geo.patch(), p, w, false, &cols, false, &mut y, 1.0);
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv2d_backward(
    geo: &Conv2dGeometry,
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = geo.positions();
    let k = geo.patch();
    let (mut dw, mut db) = (None, None);
    if need_dw {
        let cols = geo.im2col(x);
        let mut g = vec![0.0; geo.out_channels * k];
        gemm(geo.out_channels, p, k, dy, false, &cols, true, &mut g, 0.0);
        dw = Some(g);
        db = Some(dy.chunks(p).map(|c| c.iter().sum()).collect());
    }
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; k * p];
        gemm(k, geo.out_channels, p, w, true, dy, false, &mut dcols, 0.0);
        let mut dx = vec![0.0; x.len()];
        geo.col2im(&dcols, &mut dx);
        dx
    });
    (dx, dw, db)
}
