//! Forward and backward kernels: dense convolution via im2col + sgemm,
//! depth-wise convolution, activations and pixel shuffle.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::frame::Tensor;

/// Row-major matrix view with optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    pub(crate) fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    pub(crate) fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a · b + beta · c`, `c` row-major `m×n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above guarantee every index reached through the given
    // dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` into a `(C·k·k) × (H·W)` matrix with zero padding `k / 2`.
pub(crate) fn im2col(x: &Tensor, k: usize) -> Vec<f32> {
    let (h, w) = (x.height, x.width);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![0.0f32; x.channels * k * k * hw];
    for c in 0..x.channels {
        let plane = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst[xx] = src[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(col: &[f32], channels: usize, h: usize, w: usize, k: usize) -> Tensor {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = Tensor::zeros(channels, h, w);
    for c in 0..channels {
        let plane = out.channel_mut(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        plane[sy as usize * w + (xx as isize + dx) as usize] += row[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Same-padded stride-1 convolution. `weight` is `[out][in][k][k]`.
pub(crate) fn conv2d(x: &Tensor, weight: &[f32], bias: &[f32], out_ch: usize, k: usize) -> Tensor {
    let hw = x.plane();
    let kk = x.channels * k * k;
    let mut out = Tensor::zeros(out_ch, x.height, x.width);
    if k == 1 {
        gemm(Mat::new(weight, out_ch, kk), Mat::new(&x.data, kk, hw), 0.0, &mut out.data);
    } else {
        let col = im2col(x, k);
        gemm(Mat::new(weight, out_ch, kk), Mat::new(&col, kk, hw), 0.0, &mut out.data);
    }
    for (c, &b) in bias.iter().enumerate() {
        for v in out.channel_mut(c) {
            *v += b;
        }
    }
    out
}

/// Accumulates weight/bias gradients (when given) and returns the input gradient.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &[f32],
    grad_out: &Tensor,
    k: usize,
    param_grads: Option<(&mut [f32], &mut [f32])>,
    need_input_grad: bool,
) -> Option<Tensor> {
    let hw = x.plane();
    let kk = x.channels * k * k;
    let out_ch = grad_out.channels;
    let col_storage;
    let col: &[f32] = if k == 1 {
        &x.data
    } else {
        col_storage = im2col(x, k);
        &col_storage
    };
    if let Some((gw, gb)) = param_grads {
        gemm(Mat::new(&grad_out.data, out_ch, hw), Mat::new(col, kk, hw).t(), 1.0, gw);
        for (c, g) in gb.iter_mut().enumerate() {
            *g += grad_out.channel(c).iter().sum::<f32>();
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut dcol = vec![0.0f32; kk * hw];
    gemm(Mat::new(weight, out_ch, kk).t(), Mat::new(&grad_out.data, out_ch, hw), 0.0, &mut dcol);
    if k == 1 {
        Some(Tensor { channels: x.channels, height: x.height, width: x.width, data: dcol })
    } else {
        Some(col2im(&dcol, x.channels, x.height, x.width, k))
    }
}

/// Per-channel `k×k` convolution plus bias, zero padding `k / 2`.
/// `scale` is `[C][k][k]`, `bias` is `[C]`.
pub fn depthwise(x: &Tensor, scale: &[f32], bias: &[f32], k: usize) -> Tensor {
    let (h, w) = (x.height, x.width);
    let mut out = Tensor::zeros(x.channels, h, w);
    if k == 1 {
        for c in 0..x.channels {
            let (a, b) = (scale[c], bias[c]);
            for (o, &v) in out.channel_mut(c).iter_mut().zip(x.channel(c)) {
                *o = a * v + b;
            }
        }
        return out;
    }
    let pad = (k / 2) as isize;
    for c in 0..x.channels {
        let kern = &scale[c * k * k..(c + 1) * k * k];
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0f32;
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        acc += kern[ky * k + kx] * src[sy as usize * w + sx as usize];
                    }
                }
                dst[y * w + xx] = acc + bias[c];
            }
        }
    }
    out
}

/// Backward of [`depthwise`]: accumulates `(d scale, d bias)` when given and
/// returns the input gradient.
pub(crate) fn depthwise_backward(
    x: &Tensor,
    scale: &[f32],
    grad_out: &Tensor,
    k: usize,
    param_grads: Option<(&mut [f32], &mut [f32])>,
) -> Tensor {
    let (h, w) = (x.height, x.width);
    let pad = (k / 2) as isize;
    let mut dx = Tensor::zeros(x.channels, h, w);
    let mut pg = param_grads;
    for c in 0..x.channels {
        let kern = &scale[c * k * k..(c + 1) * k * k];
        let src = x.channel(c);
        let g = grad_out.channel(c);
        if let Some((ga, gb)) = pg.as_mut() {
            gb[c] += g.iter().sum::<f32>();
            for ky in 0..k {
                for kx in 0..k {
                    let dy = ky as isize - pad;
                    let dxo = kx as isize - pad;
                    let mut acc = 0.0f32;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + dxo;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += g[y * w + xx] * src[sy as usize * w + sx as usize];
                        }
                    }
                    ga[c * k * k + ky * k + kx] += acc;
                }
            }
        }
        let d = dx.channel_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let gv = g[y * w + xx];
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        d[sy as usize * w + sx as usize] += kern[ky * k + kx] * gv;
                    }
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, t: &mut Tensor) {
        match self {
            Activation::Relu => {
                for v in t.data.iter_mut() {
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for v in t.data.iter_mut() {
                    *v = libm::tanhf(*v);
                }
            }
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    pub(crate) fn backward(self, out: &Tensor, grad: &mut Tensor) {
        match self {
            Activation::Relu => {
                for (g, &o) in grad.data.iter_mut().zip(&out.data) {
                    if !(o > 0.0) {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &o) in grad.data.iter_mut().zip(&out.data) {
                    *g *= 1.0 - o * o;
                }
            }
        }
    }
}

/// `C·r² × H × W → C × rH × rW`.
pub(crate) fn pixel_shuffle(x: &Tensor, r: usize) -> Tensor {
    let c_out = x.channels / (r * r);
    let (h, w) = (x.height, x.width);
    let mut out = Tensor::zeros(c_out, h * r, w * r);
    let ow = w * r;
    for c in 0..c_out {
        for i in 0..r {
            for j in 0..r {
                let src = x.channel(c * r * r + i * r + j);
                let dst = out.channel_mut(c);
                for y in 0..h {
                    for xx in 0..w {
                        dst[(y * r + i) * ow + xx * r + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn pixel_unshuffle(g: &Tensor, r: usize) -> Tensor {
    let (h, w) = (g.height / r, g.width / r);
    let mut out = Tensor::zeros(g.channels * r * r, h, w);
    let gw = g.width;
    for c in 0..g.channels {
        let src = g.channel(c);
        for i in 0..r {
            for j in 0..r {
                let dst = out.channel_mut(c * r * r + i * r + j);
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(y * r + i) * gw + xx * r + j];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn rand_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Textbook nested-loop convolution.
    fn naive_conv(x: &Tensor, wt: &[f32], b: &[f32], out_ch: usize, k: usize) -> Tensor {
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(out_ch, x.height, x.width);
        for o in 0..out_ch {
            for y in 0..x.height as isize {
                for xx in 0..x.width as isize {
                    let mut acc = b[o] as f64;
                    for i in 0..x.channels {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - pad, xx + kx - pad);
                                if sy < 0 || sx < 0 || sy >= x.height as isize || sx >= x.width as isize {
                                    continue;
                                }
                                let wv = wt[((o * x.channels + i) * k + ky as usize) * k + kx as usize];
                                acc += wv as f64 * x.channel(i)[sy as usize * x.width + sx as usize] as f64;
                            }
                        }
                    }
                    out.channel_mut(o)[y as usize * x.width + xx as usize] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &k in &[1usize, 3, 5] {
            let x = rand_tensor(3, 6, 7, k as u64);
            let wt = rand_tensor(4, 3, k * k, 100 + k as u64).data;
            let b = [0.1, -0.2, 0.3, 0.0];
            let fast = conv2d(&x, &wt, &b, 4, k);
            let slow = naive_conv(&x, &wt, &b, 4, k);
            for (a, e) in fast.data.iter().zip(&slow.data) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = rand_tensor(2, 5, 4, 1);
        let col = im2col(&x, 3);
        let y = rand_tensor(1, 1, col.len(), 2).data;
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let back = col2im(&y, 2, 5, 4, 3);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let k = 3;
        let x = rand_tensor(2, 4, 5, 3);
        let mut wt = rand_tensor(3, 2, 9, 4).data;
        let b = [0.05f32, -0.1, 0.2];
        let probe = rand_tensor(3, 4, 5, 5);
        let objective = |w: &[f32], x: &Tensor| -> f64 {
            conv2d(x, w, &b, 3, k).data.iter().zip(&probe.data).map(|(a, p)| (*a as f64) * (*p as f64)).sum()
        };
        let mut gw = vec![0.0f32; wt.len()];
        let mut gb = vec![0.0f32; 3];
        let dx = conv2d_backward(&x, &wt, &probe, k, Some((&mut gw, &mut gb)), true).unwrap();
        let eps = 1e-2f32;
        for idx in [0usize, 7, 20, 53] {
            let orig = wt[idx];
            wt[idx] = orig + eps;
            let up = objective(&wt, &x);
            wt[idx] = orig - eps;
            let down = objective(&wt, &x);
            wt[idx] = orig;
            let fd = (up - down) / (2.0 * eps as f64);
            assert!((fd - gw[idx] as f64).abs() < 1e-3, "w[{idx}]: {fd} vs {}", gw[idx]);
        }
        let mut xp = x.clone();
        for idx in [0usize, 11, 39] {
            let orig = xp.data[idx];
            xp.data[idx] = orig + eps;
            let up = objective(&wt, &xp);
            xp.data[idx] = orig - eps;
            let down = objective(&wt, &xp);
            xp.data[idx] = orig;
            let fd = (up - down) / (2.0 * eps as f64);
            assert!((fd - dx.data[idx] as f64).abs() < 1e-3);
        }
        for c in 0..3 {
            let expected: f32 = probe.channel(c).iter().sum();
            assert!((gb[c] - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn depthwise_backward_matches_finite_differences() {
        for &k in &[1usize, 3, 5] {
            let x = rand_tensor(2, 5, 5, 10 + k as u64);
            let mut a = rand_tensor(2, k, k, 20 + k as u64).data;
            let bias = [0.3f32, -0.4];
            let probe = rand_tensor(2, 5, 5, 30 + k as u64);
            let objective = |a: &[f32]| -> f64 {
                depthwise(&x, a, &bias, k).data.iter().zip(&probe.data).map(|(o, p)| (*o as f64) * (*p as f64)).sum()
            };
            let mut ga = vec![0.0f32; a.len()];
            let mut gb = vec![0.0f32; 2];
            let dx = depthwise_backward(&x, &a, &probe, k, Some((&mut ga, &mut gb)));
            let eps = 1e-2f32;
            for idx in 0..a.len() {
                let orig = a[idx];
                a[idx] = orig + eps;
                let up = objective(&a);
                a[idx] = orig - eps;
                let down = objective(&a);
                a[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                assert!((fd - ga[idx] as f64).abs() < 1e-3);
            }
            // Input gradient is the adjoint: <depthwise_0bias(x), p> == <x, dx>.
            let zero = [0.0f32; 2];
            let lhs: f64 = depthwise(&x, &a, &zero, k).data.iter().zip(&probe.data).map(|(o, p)| (*o as f64) * (*p as f64)).sum();
            let rhs: f64 = x.data.iter().zip(&dx.data).map(|(o, p)| (*o as f64) * (*p as f64)).sum();
            assert!((lhs - rhs).abs() < 1e-4);
        }
    }

    #[test]
    fn shuffle_round_trip() {
        let x = rand_tensor(12, 3, 2, 9);
        let y = pixel_shuffle(&x, 2);
        assert_eq!((y.channels, y.height, y.width), (3, 6, 4));
        assert_eq!(pixel_unshuffle(&y, 2), x);
        // Sub-pixel (i, j) of output pixel (0, 0) comes from channel i*r + j.
        assert_eq!(y.channel(0)[1], x.channel(1)[0]);
        assert_eq!(y.channel(0)[4], x.channel(2)[0]);
    }
}
