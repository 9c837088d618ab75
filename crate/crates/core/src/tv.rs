//! TV-regularized iterative reconstruction: gradient descent with
//! backtracking on F(x) = 1/2 ||Ax - b||^2 + lambda * TV_eps(x), seeded from
//! the FBP image. A is the ray-driven projector and the adjoint used in the
//! descent direction is its exact transpose.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tomo::{fbp, project, ray_step, Geometry, Sinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvConfig {
    pub lambda_tv: f64,
    pub iterations: usize,
    pub smoothing_eps: f64,
    /// Iterations of the power method used to estimate ||A^T A||.
    pub power_iterations: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            lambda_tv: 0.1,
            iterations: 100,
            smoothing_eps: 1e-2,
            power_iterations: 20,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.smoothing_eps > 0.0) {
            return Err(Error::InvalidConfig("smoothing_eps must be > 0".into()));
        }
        if self.lambda_tv < 0.0 {
            return Err(Error::InvalidConfig("lambda_tv must be >= 0".into()));
        }
        Ok(())
    }
}

fn backproject_view(row: &[f64], angle: f64, geom: &Geometry, n: usize, out: &mut [f64]) {
    let step = ray_step(n);
    let smax = std::f64::consts::SQRT_2;
    let steps = (2.0 * smax / step).ceil() as usize;
    let (sin_t, cos_t) = angle.sin_cos();
    let nf = n as f64;
    let ni = n as isize;
    for (k, &val) in row.iter().enumerate() {
        if val == 0.0 {
            continue;
        }
        let t = geom.detector_t(k);
        let contrib = val * step;
        for si in 0..steps {
            let s = -smax + si as f64 * step;
            let x = t * cos_t - s * sin_t;
            let y = t * sin_t + s * cos_t;
            let u = (x + 1.0) * nf / 2.0 - 0.5;
            let v = (1.0 - y) * nf / 2.0 - 0.5;
            let u0 = u.floor();
            let v0 = v.floor();
            let fu = u - u0;
            let fv = v - v0;
            for (du, dv, w) in [
                (0, 0, (1.0 - fu) * (1.0 - fv)),
                (1, 0, fu * (1.0 - fv)),
                (0, 1, (1.0 - fu) * fv),
                (1, 1, fu * fv),
            ] {
                let uu = u0 as isize + du;
                let vv = v0 as isize + dv;
                if uu >= 0 && uu < ni && vv >= 0 && vv < ni {
                    out[vv as usize * n + uu as usize] += w * contrib;
                }
            }
        }
    }
}

/// Unfiltered back-projection: the exact transpose of [`project`].
pub fn backproject(sino: &Sinogram, n: usize) -> Result<Image> {
    sino.validate()?;
    let geom = Geometry {
        detectors: sino.detectors,
        detector_spacing: sino.detector_spacing,
        views: sino.views,
    };
    geom.validate()?;
    // Per-view images computed in parallel, accumulated in view order so the
    // result is independent of thread count.
    const CHUNK: usize = 32;
    let mut acc = vec![0.0f64; n * n];
    let views: Vec<usize> = (0..sino.views).collect();
    for chunk in views.chunks(CHUNK) {
        let partials: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|&v| {
                let mut img = vec![0.0f64; n * n];
                backproject_view(sino.row(v), sino.angles[v], &geom, n, &mut img);
                img
            })
            .collect();
        for p in partials {
            for (a, b) in acc.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Image::from_data(n, acc)
}

/// Smoothed isotropic total variation and its exact gradient.
///
/// Forward differences with Neumann (reflexive) boundary; each pixel
/// contributes sqrt(dx^2 + dy^2 + eps^2).
pub fn tv_value_grad(img: &Image, eps: f64) -> (f64, Image) {
    let n = img.size();
    let d = img.data();
    let mut value = 0.0;
    let mut grad = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            let dx = if j + 1 < n { d[idx + 1] - d[idx] } else { 0.0 };
            let dy = if i + 1 < n { d[idx + n] - d[idx] } else { 0.0 };
            let r = (dx * dx + dy * dy + eps * eps).sqrt();
            value += r;
            if j + 1 < n {
                grad[idx] -= dx / r;
                grad[idx + 1] += dx / r;
            }
            if i + 1 < n {
                grad[idx] -= dy / r;
                grad[idx + n] += dy / r;
            }
        }
    }
    (value, Image::from_data(n, grad).expect("finite gradient"))
}

fn data_fidelity(residual: &Sinogram) -> f64 {
    0.5 * residual.data.iter().map(|v| v * v).sum::<f64>()
}

fn objective(x: &Image, sino: &Sinogram, geom: &Geometry, cfg: &TvConfig) -> Result<(f64, Sinogram)> {
    let mut ax = project(x, geom)?;
    for (a, &b) in ax.data.iter_mut().zip(&sino.data) {
        *a -= b;
    }
    let f = data_fidelity(&ax) + cfg.lambda_tv * tv_value_grad(x, cfg.smoothing_eps).0;
    Ok((f, ax))
}

/// Power-method estimate of the spectral norm of A^T A.
pub fn normal_operator_norm(geom: &Geometry, n: usize, iterations: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = Image::from_data(n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut norm = 1.0;
    for _ in 0..iterations {
        let ax = project(&x, geom)?;
        let mut atax = backproject(&ax, n)?;
        norm = atax.l2_norm();
        if norm == 0.0 {
            return Ok(1.0);
        }
        for v in atax.data_mut() {
            *v /= norm;
        }
        x = atax;
    }
    Ok(norm)
}

/// Gradient descent with backtracking; the objective trace is non-increasing.
pub fn reconstruct_tv(sino: &Sinogram, n: usize, cfg: &TvConfig) -> Result<(Image, Vec<f64>)> {
    let (x, trace, _) = reconstruct_tv_traced(sino, n, cfg, None)?;
    Ok((x, trace))
}

/// As `reconstruct_tv`, additionally recording per-iterate PSNR against a
/// reference image when one is supplied.
pub fn reconstruct_tv_traced(
    sino: &Sinogram,
    n: usize,
    cfg: &TvConfig,
    reference: Option<(&Image, f64)>,
) -> Result<(Image, Vec<f64>, Vec<f64>)> {
    sino.validate()?;
    cfg.validate()?;
    let geom = Geometry {
        detectors: sino.detectors,
        detector_spacing: sino.detector_spacing,
        views: sino.views,
    };
    let lipschitz = normal_operator_norm(&geom, n, cfg.power_iterations)?;
    let base_step = 1.0 / lipschitz;

    let mut x = fbp(sino, n)?;
    let (mut f, mut resid) = objective(&x, sino, &geom, cfg)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut psnr_trace = Vec::new();
    let record_psnr = |img: &Image, out: &mut Vec<f64>| -> Result<()> {
        if let Some((r, peak)) = reference {
            out.push(crate::metrics::psnr(img, r, peak)?);
        }
        Ok(())
    };
    trace.push(f);
    record_psnr(&x, &mut psnr_trace)?;

    for iter in 0..cfg.iterations {
        if !f.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                what: "non-finite objective".into(),
            });
        }
        let atr = backproject(&resid, n)?;
        let (_, tv_grad) = tv_value_grad(&x, cfg.smoothing_eps);
        let grad: Vec<f64> = atr
            .data()
            .iter()
            .zip(tv_grad.data())
            .map(|(a, t)| a + cfg.lambda_tv * t)
            .collect();

        let mut alpha = base_step;
        let mut accepted = false;
        for _ in 0..40 {
            let trial_data: Vec<f64> = x
                .data()
                .iter()
                .zip(&grad)
                .map(|(xv, g)| xv - alpha * g)
                .collect();
            let trial = Image::from_data(n, trial_data)?;
            let (f_trial, resid_trial) = objective(&trial, sino, &geom, cfg)?;
            if f_trial <= f {
                x = trial;
                f = f_trial;
                resid = resid_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        // if no step length decreased F, keep the current iterate
        let _ = accepted;
        trace.push(f);
        record_psnr(&x, &mut psnr_trace)?;
    }
    Ok((x, trace, psnr_trace))
}

/// Grid search for the TV weight maximizing PSNR against a reference image.
pub fn tune_lambda(
    sino: &Sinogram,
    n: usize,
    reference: &Image,
    peak: f64,
    grid: &[f64],
    base: &TvConfig,
) -> Result<(f64, f64)> {
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &lambda in grid {
        let cfg = TvConfig {
            lambda_tv: lambda,
            ..base.clone()
        };
        let (rec, _) = reconstruct_tv(sino, n, &cfg)?;
        let p = crate::metrics::psnr(&rec, reference, peak)?;
        if p > best.1 {
            best = (lambda, p);
        }
    }
    Ok(best)
}
