//! Image quality metrics.

use crate::error::Result;
use crate::image::Image;

/// Reported when the two images are identical (MSE = 0).
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    let d = a.sub(b)?;
    let n = d.data().len() as f64;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / n)
}

/// PSNR in dB with a fixed peak value, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

/// PSNR restricted to pixels whose centers fall inside the circle of the
/// given radius about the image center.
pub fn psnr_inscribed(a: &Image, b: &Image, peak: f64, radius: f64) -> Result<f64> {
    let n = a.size();
    let d = a.sub(b)?;
    let mut se = 0.0;
    let mut count = 0usize;
    for row in 0..n {
        for col in 0..n {
            let (x, y) = d.pixel_center(row, col);
            if x * x + y * y <= radius * radius {
                se += d.get(row, col).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 || se == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / (se / count as f64)).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_cap() {
        let a = Image::from_data(16, (0..256).map(|i| i as f64).collect()).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn known_mse() {
        let a = Image::zeros(16);
        let mut b = Image::zeros(16);
        b.data_mut().fill(0.1);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-12);
    }
}
