//! Square attenuation images and analytic ellipse phantoms.
//!
//! The image spans [-1, 1]^2 with x rightward, y upward, and pixel (0, 0)
//! at the top-left corner. Pixel (row i, col j) has its center at
//! x = -1 + (j + 0.5) * 2/n, y = 1 - (i + 0.5) * 2/n. The same convention
//! is used by the projector in [`crate::tomo`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// 2-D scalar field on a square pixel grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    n: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(n: usize) -> Self {
        Image {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_data(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {n}x{n} image, got {}",
                n * n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::OutOfDomain("non-finite pixel value".into()));
        }
        Ok(Image { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n + col] = v;
    }

    /// Center coordinates of pixel (row, col) in [-1, 1]^2.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let h = 2.0 / self.n as f64;
        (-1.0 + (col as f64 + 0.5) * h, 1.0 - (row as f64 + 0.5) * h)
    }

    /// Bilinear sample at continuous coordinates (x, y); zero outside the grid.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let n = self.n as f64;
        let u = (x + 1.0) * n / 2.0 - 0.5; // fractional column
        let v = (1.0 - y) * n / 2.0 - 0.5; // fractional row
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let mut acc = 0.0;
        let ni = self.n as isize;
        for (du, dv, w) in [
            (0, 0, (1.0 - fu) * (1.0 - fv)),
            (1, 0, fu * (1.0 - fv)),
            (0, 1, (1.0 - fu) * fv),
            (1, 1, fu * fv),
        ] {
            let uu = u0 as isize + du;
            let vv = v0 as isize + dv;
            if uu >= 0 && uu < ni && vv >= 0 && vv < ni {
                acc += w * self.data[vv as usize * self.n + uu as usize];
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Pixel-wise difference self - other.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.n, self.n, other.n, other.n
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Image { n: self.n, data })
    }
}

/// One additive ellipse: value is added wherever a pixel center falls inside.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation: f64,
    pub value: f64,
}

impl Ellipse {
    pub fn disk(cx: f64, cy: f64, r: f64, value: f64) -> Self {
        Ellipse {
            center_x: cx,
            center_y: cy,
            semi_a: r,
            semi_b: r,
            rotation: 0.0,
            value,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let (s, c) = self.rotation.sin_cos();
        let xr = c * dx + s * dy;
        let yr = -s * dx + c * dy;
        (xr / self.semi_a).powi(2) + (yr / self.semi_b).powi(2) <= 1.0
    }
}

/// Analytic phantom: a list of additive ellipses on [-1, 1]^2.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EllipsePhantom {
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantom {
    pub fn new(ellipses: Vec<Ellipse>) -> Self {
        EllipsePhantom { ellipses }
    }
}

/// Rasterize a phantom to an n x n image by pixel-center containment.
pub fn rasterize(phantom: &EllipsePhantom, n: usize) -> Result<Image> {
    if n < 16 {
        return Err(Error::InvalidSize(format!("n = {n} < 16")));
    }
    let mut img = Image::zeros(n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = img.pixel_center(row, col);
            let mut v = 0.0;
            for e in &phantom.ellipses {
                if e.contains(x, y) {
                    v += e.value;
                }
            }
            img.data[row * n + col] = v;
        }
    }
    Ok(img)
}

/// Single-pixel impulses of the given amplitude at the pixels nearest each position.
pub fn point_targets(positions: &[(f64, f64)], amplitude: f64, n: usize) -> Result<Image> {
    if n < 16 {
        return Err(Error::InvalidSize(format!("n = {n} < 16")));
    }
    let mut img = Image::zeros(n);
    let h = 2.0 / n as f64;
    for &(x, y) in positions {
        if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
            return Err(Error::OutOfDomain(format!("position ({x}, {y})")));
        }
        let col = (((x + 1.0) / h - 0.5).round().max(0.0) as usize).min(n - 1);
        let row = (((1.0 - y) / h - 0.5).round().max(0.0) as usize).min(n - 1);
        img.data[row * n + col] += amplitude;
    }
    Ok(img)
}
