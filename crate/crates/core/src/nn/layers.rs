//! Differentiable layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during forward; the
//! orchestration in `network` runs the layers in reverse for backprop.
//! Parameter gradients accumulate into the `g*` fields and are zeroed by
//! the optimizer step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// 2-D convolution with odd kernel size and same-size zero padding.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Weights laid out (out, in, ky, kx).
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
    cache_x: Option<Tensor4>,
}

impl Conv2d {
    /// Scaled He-normal initialization: w ~ N(0, (0.1)^2 · 2 / fan_in), zero bias.
    ///
    /// Every hidden conv is followed by batch norm, which makes the layer's
    /// function invariant to the weight scale while the effective plain-SGD
    /// step on the weight *direction* grows as 1/‖w‖². At unit He scale the
    /// network sits far below its stability-limit learning rate yet still
    /// trains an order of magnitude too slowly; shrinking the init recovers
    /// the missing effective step without changing the initial function.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = in_channels * kernel * kernel;
        let std = 0.1 * (2.0 / fan_in as f64).sqrt();
        let w = (0..out_channels * fan_in)
            .map(|_| std * gaussian(rng))
            .collect::<Vec<_>>();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            gw: vec![0.0; w.len()],
            w,
            b: vec![0.0; out_channels],
            gb: vec![0.0; out_channels],
            cache_x: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let [n, c, h, w] = x.shape;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} channels, got {}",
                self.in_channels, c
            )));
        }
        let k = self.kernel;
        let pad = k / 2;
        let mut y = Tensor4::zeros([n, self.out_channels, h, w]);
        let hw = h * w;
        // each (batch, out-channel) plane is independent
        y.data
            .par_chunks_mut(hw)
            .enumerate()
            .for_each(|(plane, out)| {
                let bi = plane / self.out_channels;
                let oc = plane % self.out_channels;
                out.fill(self.b[oc]);
                for ic in 0..self.in_channels {
                    let xin = x.plane(bi, ic);
                    let wbase = (oc * self.in_channels + ic) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = self.w[wbase + ky * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let dy = ky as isize - pad as isize;
                            let dx = kx as isize - pad as isize;
                            accumulate_shifted(out, xin, h, w, dy, dx, wv);
                        }
                    }
                }
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::InvalidConfig("conv backward without forward".into()))?;
        let [n, _, h, w] = x.shape;
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;

        // input gradient: correlation of gy with the flipped kernel
        let mut gx = Tensor4::zeros(x.shape);
        gx.data
            .par_chunks_mut(hw)
            .enumerate()
            .for_each(|(plane, out)| {
                let bi = plane / self.in_channels;
                let ic = plane % self.in_channels;
                for oc in 0..self.out_channels {
                    let gin = gy.plane(bi, oc);
                    let wbase = (oc * self.in_channels + ic) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = self.w[wbase + ky * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let dy = pad as isize - ky as isize;
                            let dx = pad as isize - kx as isize;
                            accumulate_shifted(out, gin, h, w, dy, dx, wv);
                        }
                    }
                }
            });

        // weight and bias gradients; each out-channel row is independent
        let kk = k * k;
        let row = self.in_channels * kk;
        let gb = &mut self.gb;
        self.gw
            .par_chunks_mut(row)
            .zip(gb.par_iter_mut())
            .enumerate()
            .for_each(|(oc, (gwrow, gb))| {
                for bi in 0..n {
                    let gplane = gy.plane(bi, oc);
                    *gb += gplane.iter().sum::<f64>();
                    for ic in 0..self.in_channels {
                        let xin = x.plane(bi, ic);
                        for ky in 0..k {
                            for kx in 0..k {
                                let dy = ky as isize - pad as isize;
                                let dx = kx as isize - pad as isize;
                                gwrow[ic * kk + ky * k + kx] +=
                                    dot_shifted(gplane, xin, h, w, dy, dx);
                            }
                        }
                    }
                }
            });
        Ok(gx)
    }
}

/// out[i][j] += scale * src[i + dy][j + dx], zero outside.
#[inline]
fn accumulate_shifted(out: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, scale: f64) {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize).min(h as isize - dy).max(0) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize).min(w as isize - dx).max(0) as usize;
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let orow = &mut out[i * w + j0..i * w + j1];
        let srow = &src[si * w + (j0 as isize + dx) as usize..];
        for (o, s) in orow.iter_mut().zip(srow) {
            *o += scale * s;
        }
    }
}

/// sum over valid pixels of a[i][j] * b[i + dy][j + dx].
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize).min(h as isize - dy).max(0) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize).min(w as isize - dx).max(0) as usize;
    let mut acc = 0.0;
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let arow = &a[i * w + j0..i * w + j1];
        let brow = &b[si * w + (j0 as isize + dx) as usize..];
        for (x, y) in arow.iter().zip(brow) {
            acc += x * y;
        }
    }
    acc
}

/// Standard normal via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Per-channel batch normalization over (batch, height, width).
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub ggamma: Vec<f64>,
    pub gbeta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub initialized: bool,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            ggamma: vec![0.0; channels],
            gbeta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            initialized: false,
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let [n, c, h, w] = x.shape;
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm expects {} channels, got {}",
                self.channels, c
            )));
        }
        if !train {
            if !self.initialized {
                return Err(Error::UninitializedStats);
            }
            let mut y = Tensor4::zeros(x.shape);
            for bi in 0..n {
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                    let (g, bt, m) = (self.gamma[ch], self.beta[ch], self.running_mean[ch]);
                    for (o, &v) in y.plane_mut(bi, ch).iter_mut().zip(x.plane(bi, ch)) {
                        *o = g * (v - m) * inv + bt;
                    }
                }
            }
            return Ok(y);
        }

        let count = (n * h * w) as f64;
        let mut xhat = Tensor4::zeros(x.shape);
        let mut inv_std = vec![0.0; c];
        let mut y = Tensor4::zeros(x.shape);
        for ch in 0..c {
            let mut mean = 0.0;
            for bi in 0..n {
                mean += x.plane(bi, ch).iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for bi in 0..n {
                var += x.plane(bi, ch).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= count; // biased, matching the normalization itself
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            for bi in 0..n {
                let xh = xhat.plane_mut(bi, ch);
                for (o, &v) in xh.iter_mut().zip(x.plane(bi, ch)) {
                    *o = (v - mean) * inv;
                }
                let (g, bt) = (self.gamma[ch], self.beta[ch]);
                for (o, &v) in y.plane_mut(bi, ch).iter_mut().zip(&*xhat.plane_mut(bi, ch)) {
                    *o = g * v + bt;
                }
            }
            if self.initialized {
                self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean;
                self.running_var[ch] = self.momentum * self.running_var[ch] + (1.0 - self.momentum) * var;
            } else {
                self.running_mean[ch] = mean;
                self.running_var[ch] = var;
            }
        }
        self.initialized = true;
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidConfig("batchnorm backward without forward".into()))?;
        let [n, c, h, w] = gy.shape;
        let count = (n * h * w) as f64;
        let mut gx = Tensor4::zeros(gy.shape);
        for ch in 0..c {
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for bi in 0..n {
                for (&g, &xh) in gy.plane(bi, ch).iter().zip(cache.xhat.plane(bi, ch)) {
                    sum_gy += g;
                    sum_gy_xhat += g * xh;
                }
            }
            self.gbeta[ch] += sum_gy;
            self.ggamma[ch] += sum_gy_xhat;
            let scale = self.gamma[ch] * cache.inv_std[ch] / count;
            for bi in 0..n {
                let out = gx.plane_mut(bi, ch);
                for ((o, &g), &xh) in out
                    .iter_mut()
                    .zip(gy.plane(bi, ch))
                    .zip(cache.xhat.plane(bi, ch))
                {
                    *o = scale * (count * g - sum_gy - xh * sum_gy_xhat);
                }
            }
        }
        Ok(gx)
    }
}

/// Elementwise max(x, 0).
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut y = x.clone();
        let mut mask = Vec::new();
        if train {
            mask.reserve(y.data.len());
        }
        for v in y.data.iter_mut() {
            let keep = *v > 0.0;
            if train {
                mask.push(keep);
            }
            if !keep {
                *v = 0.0;
            }
        }
        if train {
            self.mask = Some(mask);
        }
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::InvalidConfig("relu backward without forward".into()))?;
        let mut gx = gy.clone();
        for (g, keep) in gx.data.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
        Ok(gx)
    }
}

/// 2x2 max pooling, stride 2. Ties break toward the earlier element in
/// row-major scan order so the backward scatter is deterministic.
pub struct MaxPool2x2 {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 { argmax: None }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let [n, c, h, w] = x.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool needs even spatial size, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Tensor4::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; y.numel()];
        for bi in 0..n {
            for ch in 0..c {
                let xin = x.plane(bi, ch);
                let base = y.idx(bi, ch, 0, 0);
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let at = (2 * i + di) * w + 2 * j + dj;
                                if xin[at] > best {
                                    best = xin[at];
                                    best_at = at;
                                }
                            }
                        }
                        y.data[base + i * ow + j] = best;
                        arg[base + i * ow + j] = x.idx(bi, ch, 0, 0) + best_at;
                    }
                }
            }
        }
        if train {
            self.argmax = Some((arg, x.shape));
        }
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let (arg, in_shape) = self
            .argmax
            .take()
            .ok_or_else(|| Error::InvalidConfig("maxpool backward without forward".into()))?;
        let mut gx = Tensor4::zeros(in_shape);
        for (g, at) in gy.data.iter().zip(arg) {
            gx.data[at] += g;
        }
        Ok(gx)
    }
}

/// 2x up-sampling that broadcasts each value to its 2x2 block scaled by 1/4,
/// the exact adjoint of 2x2 average pooling.
pub struct AvgUnpool2x2 {
    in_shape: Option<[usize; 4]>,
}

impl AvgUnpool2x2 {
    pub fn new() -> Self {
        AvgUnpool2x2 { in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let [n, c, h, w] = x.shape;
        let mut y = Tensor4::zeros([n, c, 2 * h, 2 * w]);
        for bi in 0..n {
            for ch in 0..c {
                let base_in = x.idx(bi, ch, 0, 0);
                let base_out = y.idx(bi, ch, 0, 0);
                for i in 0..h {
                    for j in 0..w {
                        let v = 0.25 * x.data[base_in + i * w + j];
                        for di in 0..2 {
                            for dj in 0..2 {
                                y.data[base_out + (2 * i + di) * 2 * w + 2 * j + dj] = v;
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.in_shape = Some(x.shape);
        }
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let in_shape = self
            .in_shape
            .take()
            .ok_or_else(|| Error::InvalidConfig("unpool backward without forward".into()))?;
        let [n, c, h, w] = in_shape;
        let mut gx = Tensor4::zeros(in_shape);
        for bi in 0..n {
            for ch in 0..c {
                let base_in = gx.idx(bi, ch, 0, 0);
                let base_out = gy.idx(bi, ch, 0, 0);
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                acc += gy.data[base_out + (2 * i + di) * 2 * w + 2 * j + dj];
                            }
                        }
                        gx.data[base_in + i * w + j] = 0.25 * acc;
                    }
                }
            }
        }
        Ok(gx)
    }
}
