//! SGD training loop over random patches with flip augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{LearnMode, Network};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;

/// One training example: the streaky reconstruction and its clean reference.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Image,
    pub reference: Image,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    /// Peak signal value used for validation PSNR.
    pub val_peak: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr_start: 0.3,
            lr_end: 0.03,
            weight_decay: 1e-5,
            patch_size: 64,
            batch_size: 4,
            batches_per_epoch: 24,
            val_peak: 1.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::InvalidConfig("training counts must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_start.is_finite()) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch size must be positive".into()));
        }
        Ok(())
    }

    /// Geometric interpolation from lr_start (epoch 0) to lr_end (last epoch).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn final_val_psnr(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_psnr)
    }
}

/// Crop a patch with optional horizontal/vertical flips into `out`.
fn crop_flip(img: &Image, i0: usize, j0: usize, p: usize, fh: bool, fv: bool, out: &mut [f64]) {
    let n = img.size();
    let data = img.data();
    for i in 0..p {
        let si = if fv { i0 + p - 1 - i } else { i0 + i };
        for j in 0..p {
            let sj = if fh { j0 + p - 1 - j } else { j0 + j };
            out[i * p + j] = data[si * n + sj];
        }
    }
}

/// Network-space target for a sample under the given learn mode.
fn target_pixel(mode: LearnMode, input: f64, reference: f64) -> f64 {
    match mode {
        LearnMode::Residual => input - reference,
        LearnMode::Image => reference,
    }
}

/// Mean PSNR of the restored validation images against their references.
pub fn validation_psnr(net: &mut Network, val: &[Sample], peak: f64) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::InvalidConfig("empty validation set".into()));
    }
    let mut acc = 0.0;
    for s in val {
        let restored = net.infer(&s.input)?;
        acc += psnr(&restored, &s.reference, peak)?;
    }
    Ok(acc / val.len() as f64)
}

/// Train in place. Deterministic for a fixed seed, sample order, and
/// network initialization.
pub fn train(
    net: &mut Network,
    samples: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let p = cfg.patch_size;
    for s in samples {
        if s.input.size() != s.reference.size() {
            return Err(Error::ShapeMismatch("sample size mismatch".into()));
        }
        if s.input.size() < p {
            return Err(Error::InvalidConfig(format!(
                "patch {} larger than image {}",
                p,
                s.input.size()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mode = net.spec.mode;
    net.zero_grads();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_acc = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let mut x = Tensor4::zeros([cfg.batch_size, 1, p, p]);
            let mut y = Tensor4::zeros([cfg.batch_size, 1, p, p]);
            for b in 0..cfg.batch_size {
                let s = &samples[rng.gen_range(0..samples.len())];
                let n = s.input.size();
                let i0 = rng.gen_range(0..=n - p);
                let j0 = rng.gen_range(0..=n - p);
                let fh = rng.gen_bool(0.5);
                let fv = rng.gen_bool(0.5);
                let hw = p * p;
                crop_flip(&s.input, i0, j0, p, fh, fv, &mut x.data[b * hw..(b + 1) * hw]);
                crop_flip(&s.reference, i0, j0, p, fh, fv, &mut y.data[b * hw..(b + 1) * hw]);
                for (t, &inp) in y.data[b * hw..(b + 1) * hw]
                    .iter_mut()
                    .zip(&x.data[b * hw..(b + 1) * hw])
                {
                    *t = target_pixel(mode, inp, *t);
                }
            }
            let loss = net.forward_backward(&x, &y, cfg.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: epoch,
                    what: "training loss".into(),
                });
            }
            loss_acc += loss;
            net.sgd_step(lr, cfg.weight_decay);
        }
        let val_psnr = if val.is_empty() {
            None
        } else {
            Some(validation_psnr(net, val, cfg.val_peak)?)
        };
        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_acc / cfg.batches_per_epoch as f64,
            val_psnr,
        });
    }
    Ok(history)
}
