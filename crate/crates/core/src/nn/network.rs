//! Encoder-decoder network assembly, forward/backward orchestration, and
//! the parameter-matched single-scale variant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AvgUnpool2x2, BatchNorm, Conv2d, MaxPool2x2, Relu};
use super::tensor::{concat_channels, split_channels, Tensor4};
use crate::error::{Error, Result};
use crate::image::Image;

/// What the network is trained to produce from a streaky input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnMode {
    /// Predict the artifact field; the restored image is input minus output.
    Residual,
    /// Predict the clean image directly.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Number of resolution scales (1 = no pooling).
    pub stages: usize,
    /// Channel width at the finest scale; doubles per scale.
    pub base_channels: usize,
    /// Encoder-decoder with pooling and skip connections when true,
    /// otherwise a flat stack of same-resolution convolutions.
    pub multi_scale: bool,
    pub mode: LearnMode,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.base_channels == 0 {
            return Err(Error::InvalidConfig(
                "network needs at least one stage and one channel".into(),
            ));
        }
        Ok(())
    }

    /// Number of 3x3 convolutions in the multi-scale layout with these
    /// stages: 4 per encoder stage, 4 per inner decoder stage, 2 in the
    /// finest decoder stage.
    pub fn conv3_count(&self) -> usize {
        if self.stages == 1 {
            4
        } else {
            8 * self.stages - 6
        }
    }
}

/// Convolution with optional batch normalization and ReLU.
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm>,
    pub relu: Option<Relu>,
}

impl ConvUnit {
    fn new(inc: usize, outc: usize, kernel: usize, activated: bool, rng: &mut ChaCha8Rng) -> Self {
        ConvUnit {
            conv: Conv2d::new(inc, outc, kernel, rng),
            bn: if activated { Some(BatchNorm::new(outc)) } else { None },
            relu: if activated { Some(Relu::new()) } else { None },
        }
    }

    fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let mut t = self.conv.forward(x, train)?;
        if let Some(bn) = &mut self.bn {
            t = bn.forward(&t, train)?;
        }
        if let Some(relu) = &mut self.relu {
            t = relu.forward(&t, train);
        }
        Ok(t)
    }

    fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let mut g = gy.clone();
        if let Some(relu) = &mut self.relu {
            g = relu.backward(&g)?;
        }
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.backward(&g)
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, |b| b.param_count())
    }
}

struct Stage {
    units: Vec<ConvUnit>,
}

impl Stage {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let mut t = x.clone();
        for u in self.units.iter_mut() {
            t = u.forward(&t, train)?;
        }
        Ok(t)
    }

    fn backward(&mut self, gy: &Tensor4) -> Result<Tensor4> {
        let mut g = gy.clone();
        for u in self.units.iter_mut().rev() {
            g = u.backward(&g)?;
        }
        Ok(g)
    }
}

pub struct Network {
    pub spec: NetSpec,
    enc: Vec<Stage>,
    /// Inner decoder stages (deepest scale first), then the 2-conv finest stage.
    dec: Vec<Stage>,
    pools: Vec<MaxPool2x2>,
    unpools: Vec<AvgUnpool2x2>,
    head: ConvUnit,
}

/// Channel width at scale s.
fn width(base: usize, s: usize) -> usize {
    base << s
}

pub fn build_network(spec: &NetSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if spec.multi_scale {
        build_multi(spec, &mut rng)
    } else {
        build_single(spec, &mut rng)
    }
}

fn build_multi(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Result<Network> {
    let s_total = spec.stages;
    let base = spec.base_channels;
    let mut enc = Vec::new();
    for s in 0..s_total {
        let inc = if s == 0 { 1 } else { width(base, s - 1) };
        let c = width(base, s);
        let mut units = vec![ConvUnit::new(inc, c, 3, true, rng)];
        for _ in 1..4 {
            units.push(ConvUnit::new(c, c, 3, true, rng));
        }
        enc.push(Stage { units });
    }
    let mut dec = Vec::new();
    for s in (0..s_total.saturating_sub(1)).rev() {
        let c = width(base, s);
        // unpooled deep features carry 2c channels; the skip adds c more
        let inc = 3 * c;
        let n_units = if s == 0 { 2 } else { 4 };
        let mut units = vec![ConvUnit::new(inc, c, 3, true, rng)];
        for _ in 1..n_units {
            units.push(ConvUnit::new(c, c, 3, true, rng));
        }
        dec.push(Stage { units });
    }
    Ok(Network {
        spec: *spec,
        enc,
        dec,
        pools: (1..s_total).map(|_| MaxPool2x2::new()).collect(),
        unpools: (1..s_total).map(|_| AvgUnpool2x2::new()).collect(),
        head: ConvUnit::new(base, 1, 1, false, rng),
    })
}

fn build_single(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Result<Network> {
    let c = matched_single_width(spec);
    let n3 = spec.conv3_count();
    let mut units = vec![ConvUnit::new(1, c, 3, true, rng)];
    for _ in 1..n3 {
        units.push(ConvUnit::new(c, c, 3, true, rng));
    }
    Ok(Network {
        spec: *spec,
        enc: vec![Stage { units }],
        dec: Vec::new(),
        pools: Vec::new(),
        unpools: Vec::new(),
        head: ConvUnit::new(c, 1, 1, false, rng),
    })
}

/// Parameter count of the multi-scale layout without building it.
pub fn multi_scale_param_count(spec: &NetSpec) -> usize {
    let base = spec.base_channels;
    let s_total = spec.stages;
    let conv = |inc: usize, outc: usize, k: usize| inc * outc * k * k + outc;
    let bn = |c: usize| 2 * c;
    let mut total = 0;
    for s in 0..s_total {
        let inc = if s == 0 { 1 } else { width(base, s - 1) };
        let c = width(base, s);
        total += conv(inc, c, 3) + bn(c) + 3 * (conv(c, c, 3) + bn(c));
    }
    for s in 0..s_total.saturating_sub(1) {
        let c = width(base, s);
        let n_units = if s == 0 { 2 } else { 4 };
        total += conv(3 * c, c, 3) + bn(c) + (n_units - 1) * (conv(c, c, 3) + bn(c));
    }
    total + conv(base, 1, 1)
}

fn single_param_count(spec: &NetSpec, c: usize) -> usize {
    let n3 = spec.conv3_count();
    (9 * c + c) + (n3 - 1) * (9 * c * c + c) + n3 * 2 * c + (c + 1)
}

/// Constant width making the flat stack match the multi-scale parameter
/// count as closely as possible.
pub fn matched_single_width(spec: &NetSpec) -> usize {
    let target = multi_scale_param_count(spec);
    let mut best = 1;
    let mut best_err = usize::MAX;
    for c in 1..=width(spec.base_channels, spec.stages) * 4 {
        let err = single_param_count(spec, c).abs_diff(target);
        if err < best_err {
            best_err = err;
            best = c;
        }
        if single_param_count(spec, c) > 2 * target {
            break;
        }
    }
    best
}

impl Network {
    pub fn param_count(&self) -> usize {
        let mut total = self.head.param_count();
        for st in self.enc.iter().chain(&self.dec) {
            total += st.units.iter().map(|u| u.param_count()).sum::<usize>();
        }
        total
    }

    fn visit_units(&mut self, f: &mut impl FnMut(&mut ConvUnit)) {
        for st in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            for u in st.units.iter_mut() {
                f(u);
            }
        }
        f(&mut self.head);
    }

    /// Visit each (parameter, gradient, decays) slot.
    pub fn for_each_param(&mut self, mut f: impl FnMut(&mut [f64], &mut [f64], bool)) {
        self.visit_units(&mut |u| {
            f(&mut u.conv.w, &mut u.conv.gw, true);
            f(&mut u.conv.b, &mut u.conv.gb, false);
            if let Some(bn) = &mut u.bn {
                f(&mut bn.gamma, &mut bn.ggamma, false);
                f(&mut bn.beta, &mut bn.gbeta, false);
            }
        });
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(|_, g, _| g.fill(0.0));
    }

    /// Sum of squared convolution weights (the decayed parameters).
    pub fn weight_norm_sq(&mut self) -> f64 {
        let mut acc = 0.0;
        self.for_each_param(|p, _, decays| {
            if decays {
                acc += p.iter().map(|v| v * v).sum::<f64>();
            }
        });
        acc
    }

    /// Plain SGD step with weight decay folded into the gradient; clears grads.
    pub fn sgd_step(&mut self, lr: f64, weight_decay: f64) {
        self.for_each_param(|p, g, decays| {
            let wd = if decays { weight_decay } else { 0.0 };
            for (pv, gv) in p.iter_mut().zip(g.iter_mut()) {
                *pv -= lr * (*gv + wd * *pv);
                *gv = 0.0;
            }
        });
    }

    /// Full learnable + running state flattened in a fixed visit order.
    pub fn state(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_units(&mut |u| {
            out.extend_from_slice(&u.conv.w);
            out.extend_from_slice(&u.conv.b);
            if let Some(bn) = &u.bn {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
                out.extend_from_slice(&bn.running_mean);
                out.extend_from_slice(&bn.running_var);
                out.push(if bn.initialized { 1.0 } else { 0.0 });
            }
        });
        out
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        use std::cell::Cell;
        let at = Cell::new(0usize);
        let err = Cell::new(false);
        let take = |slot: &mut [f64]| {
            let start = at.get();
            if start + slot.len() > state.len() {
                err.set(true);
                return;
            }
            slot.copy_from_slice(&state[start..start + slot.len()]);
            at.set(start + slot.len());
        };
        self.visit_units(&mut |u| {
            take(&mut u.conv.w);
            take(&mut u.conv.b);
            if let Some(bn) = &mut u.bn {
                take(&mut bn.gamma);
                take(&mut bn.beta);
                take(&mut bn.running_mean);
                take(&mut bn.running_var);
                if at.get() < state.len() {
                    bn.initialized = state[at.get()] != 0.0;
                    at.set(at.get() + 1);
                } else {
                    err.set(true);
                }
            }
        });
        let at = at.get();
        if err.get() || at != state.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} values, network expects {}",
                state.len(),
                at
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        if x.shape[1] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network input must be single-channel, got {}",
                x.shape[1]
            )));
        }
        if self.spec.multi_scale && self.spec.stages > 1 {
            let min = 1usize << (self.spec.stages - 1);
            if x.shape[2] % min != 0 || x.shape[3] % min != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "spatial size {}x{} not divisible by {min}",
                    x.shape[2], x.shape[3]
                )));
            }
        }
        if !self.spec.multi_scale {
            let t = self.enc[0].forward(x, train)?;
            return self.head.forward(&t, train);
        }
        let s_total = self.spec.stages;
        let mut skips: Vec<Tensor4> = Vec::new();
        let mut t = x.clone();
        for s in 0..s_total {
            if s > 0 {
                t = self.pools[s - 1].forward(&t, train)?;
            }
            t = self.enc[s].forward(&t, train)?;
            if self.spec.multi_scale && s + 1 < s_total {
                skips.push(t.clone());
            }
        }
        if self.spec.multi_scale {
            for di in 0..s_total.saturating_sub(1) {
                let s = s_total - 2 - di;
                t = self.unpools[di].forward(&t, train);
                t = concat_channels(&skips[s], &t)?;
                t = self.dec[di].forward(&t, train)?;
            }
        }
        self.head.forward(&t, train)
    }

    /// One training step's gradient computation: forward, data loss
    /// (1 / (2 numel)) * sum (out - y)^2 plus (wd / 2) * |weights|^2,
    /// gradients accumulated into the layers. Returns the total loss.
    pub fn forward_backward(&mut self, x: &Tensor4, y: &Tensor4, weight_decay: f64) -> Result<f64> {
        let out = self.forward(x, true)?;
        if out.shape != y.shape {
            return Err(Error::ShapeMismatch(format!(
                "target {:?} vs output {:?}",
                y.shape, out.shape
            )));
        }
        let n = out.numel() as f64;
        let mut loss = 0.0;
        let mut gy = Tensor4::zeros(out.shape);
        for ((g, &o), &t) in gy.data.iter_mut().zip(&out.data).zip(&y.data) {
            let d = o - t;
            loss += d * d;
            *g = d / n;
        }
        loss /= 2.0 * n;
        loss += 0.5 * weight_decay * self.weight_norm_sq();
        self.backward(&gy)?;
        Ok(loss)
    }

    fn backward(&mut self, gy: &Tensor4) -> Result<()> {
        if !self.spec.multi_scale {
            let g = self.head.backward(gy)?;
            self.enc[0].backward(&g)?;
            return Ok(());
        }
        let s_total = self.spec.stages;
        let base = self.spec.base_channels;
        let mut g = self.head.backward(gy)?;
        let mut skip_grads: Vec<Option<Tensor4>> = vec![None; s_total.saturating_sub(1)];
        if self.spec.multi_scale {
            for di in (0..s_total.saturating_sub(1)).rev() {
                let s = s_total - 2 - di;
                g = self.dec[di].backward(&g)?;
                let (gskip, gup) = split_channels(&g, width(base, s));
                skip_grads[s] = Some(gskip);
                g = self.unpools[di].backward(&gup)?;
            }
        }
        for s in (0..s_total).rev() {
            if let Some(gs) = skip_grads[..s_total.saturating_sub(1)]
                .get_mut(s)
                .and_then(Option::take)
            {
                for (a, b) in g.data.iter_mut().zip(&gs.data) {
                    *a += b;
                }
            }
            g = self.enc[s].backward(&g)?;
            if s > 0 {
                g = self.pools[s - 1].backward(&g)?;
            }
        }
        Ok(())
    }

    /// Restore an image: run the net in eval mode and apply the learn mode.
    pub fn infer(&mut self, input: &Image) -> Result<Image> {
        let n = input.size();
        let x = Tensor4::from_data([1, 1, n, n], input.data().to_vec())?;
        let y = self.forward(&x, false)?;
        let out = match self.spec.mode {
            LearnMode::Residual => x
                .data
                .iter()
                .zip(&y.data)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
            LearnMode::Image => y.data,
        };
        Image::from_data(n, out)
    }
}

/// Receptive field of one output pixel, in input pixels, by composing
/// per-layer growth: a conv adds (k - 1) * jump, pooling doubles the jump,
/// unpooling halves it.
pub fn receptive_field(spec: &NetSpec) -> usize {
    if !spec.multi_scale {
        return 1 + 2 * spec.conv3_count();
    }
    let s_total = spec.stages;
    let mut rf = 1.0f64;
    let mut jump = 1.0f64;
    for s in 0..s_total {
        if s > 0 {
            rf += jump; // 2x2 pool window
            jump *= 2.0;
        }
        rf += 4.0 * 2.0 * jump;
    }
    for di in 0..s_total.saturating_sub(1) {
        let s = s_total - 2 - di;
        jump /= 2.0;
        rf += jump; // 2x2 unpool footprint
        let n_units = if s == 0 { 2.0 } else { 4.0 };
        rf += n_units * 2.0 * jump;
    }
    rf.round() as usize
}
