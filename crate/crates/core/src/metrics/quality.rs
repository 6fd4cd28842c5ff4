//! Pixel-level image-quality scores on byte-range images.

use crate::data::{Image, RangeTag};
use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;
pub const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
pub const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SsimMode {
    /// Gaussian window slid over every fully contained position.
    #[default]
    Windowed,
    /// One window covering the whole image, per channel.
    Global,
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width)));
    }
    if a.range != RangeTag::Byte || b.range != RangeTag::Byte {
        return Err(Error::Range("image-quality scores expect byte-range images".into()));
    }
    Ok(())
}

/// One channel as a row-major `f64` plane.
fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.pixels.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| g[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, SsimMode::Windowed)
}

/// Structural similarity averaged over windows and channels.
pub fn ssim_with(a: &Image, b: &Image, mode: SsimMode) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    match mode {
        SsimMode::Global => {
            let n = (h * w) as f64;
            for c in 0..3 {
                let (x, y) = (plane(a, c), plane(b, c));
                let mx = x.iter().sum::<f64>() / n;
                let my = y.iter().sum::<f64>() / n;
                let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
                let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
                let cxy = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
                total += ssim_formula(mx, my, vx, vy, cxy);
            }
            Ok(total / 3.0)
        }
        SsimMode::Windowed => {
            for (axis, actual) in [("height", h), ("width", w)] {
                if actual < SSIM_WINDOW {
                    return Err(Error::DimensionTooSmall { axis, actual, required: SSIM_WINDOW });
                }
            }
            let g = gaussian_kernel();
            let count = ((h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1)) as f64;
            for c in 0..3 {
                let (x, y) = (plane(a, c), plane(b, c));
                let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
                let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
                let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
                let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &g));
                let mut sum = 0.0;
                for i in 0..mx.len() {
                    let (ux, uy) = (mx[i], my[i]);
                    sum += ssim_formula(ux, uy, sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
                }
                total += sum / count;
            }
            Ok(total / 3.0)
        }
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.pixels.iter().zip(&b.pixels).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum();
    Ok(s / a.pixels.len() as f64)
}

/// Mean absolute difference over all pixels and channels.
pub fn mean_abs_diff(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width)));
    }
    let s: f64 = a.pixels.iter().zip(&b.pixels).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum();
    Ok(s / a.pixels.len() as f64)
}

fn peak_ratio_db(err: f64) -> f64 {
    if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / err).log10()
    }
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(peak_ratio_db(mse(a, b)?))
}

/// Decibel score of the mean absolute difference between summed vertical and
/// horizontal gradient magnitudes, over pixels that have both an upper and a
/// left neighbor. Matching gradients give `+inf`.
pub fn sharpness_difference(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height, a.width);
    for (axis, actual) in [("height", h), ("width", w)] {
        if actual < 2 {
            return Err(Error::DimensionTooSmall { axis, actual, required: 2 });
        }
    }
    let mut sum = 0.0;
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        for i in 1..h {
            for j in 1..w {
                let at = i * w + j;
                let gx = (x[at] - x[at - w]).abs() + (x[at] - x[at - 1]).abs();
                let gy = (y[at] - y[at - w]).abs() + (y[at] - y[at - 1]).abs();
                sum += (gx - gy).abs();
            }
        }
    }
    Ok(peak_ratio_db(sum / (3 * (h - 1) * (w - 1)) as f64))
}
