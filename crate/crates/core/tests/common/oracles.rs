//! Brute-force reference implementations used to check the metric code.
//! They work from exact integer pixel sums or from alternative formulas so
//! that they share no arithmetic with the library.

#![allow(dead_code)]

use crossview::data::{Image, RangeTag};
use rand::Rng;

/// `|a - b| <= tol * max(|a|, |b|)`, exact equality for infinities, and a
/// 1e-15 absolute slack so that true zeros tolerate rounding residue.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    let diff = (a - b).abs();
    diff <= tol * a.abs().max(b.abs()) || diff <= 1e-15
}

/// Byte image with integer pixels.
pub fn random_byte_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    let px = (0..h * w * 3).map(|_| rng.random_range(0..=255u8) as f32).collect();
    Image::new(h, w, px, RangeTag::Byte).unwrap()
}

/// A perturbed copy, so pairs are correlated like real outputs and targets.
pub fn perturbed(rng: &mut impl Rng, img: &Image, amount: i32) -> Image {
    let px = img
        .pixels
        .iter()
        .map(|&v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as f32)
        .collect();
    Image::new(img.height, img.width, px, RangeTag::Byte).unwrap()
}

fn ints(img: &Image, c: usize) -> Vec<i64> {
    (0..img.height * img.width).map(|i| img.pixels[i * 3 + c] as i64).collect()
}

pub fn ssim_global(a: &Image, b: &Image) -> f64 {
    let n = (a.height * a.width) as i64;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (ints(a, c), ints(b, c));
        let sx: i64 = x.iter().sum();
        let sy: i64 = y.iter().sum();
        let sxx: i64 = x.iter().map(|v| v * v).sum();
        let syy: i64 = y.iter().map(|v| v * v).sum();
        let sxy: i64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        // n^2 times the population (co)variances, exact in integers
        let vx = (n * sxx - sx * sx) as f64;
        let vy = (n * syy - sy * sy) as f64;
        let cxy = (n * sxy - sx * sy) as f64;
        let (nf, n2) = (n as f64, (n * n) as f64);
        let (mx, my) = (sx as f64 / nf, sy as f64 / nf);
        total += (2.0 * mx * my + c1) * (2.0 * cxy / n2 + c2) / ((mx * mx + my * my + c1) * ((vx + vy) / n2 + c2));
    }
    total / 3.0
}

fn sse(a: &Image, b: &Image) -> i64 {
    a.pixels.iter().zip(&b.pixels).map(|(&p, &q)| (p as i64 - q as i64).pow(2)).sum()
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    let e = sse(a, b);
    if e == 0 {
        return f64::INFINITY;
    }
    10.0 * ((255.0f64 * 255.0 * a.pixels.len() as f64) / e as f64).log10()
}

pub fn l1(a: &Image, b: &Image) -> f64 {
    let s: i64 = a.pixels.iter().zip(&b.pixels).map(|(&p, &q)| (p as i64 - q as i64).abs()).sum();
    s as f64 / a.pixels.len() as f64
}

pub fn sharpness_difference(a: &Image, b: &Image) -> f64 {
    let (h, w) = (a.height, a.width);
    let grad = |img: &Image, y: usize, x: usize, c: usize| -> i64 {
        let v = |yy: usize, xx: usize| img.at(yy, xx)[c] as i64;
        (v(y, x) - v(y - 1, x)).abs() + (v(y, x) - v(y, x - 1)).abs()
    };
    let mut s: i64 = 0;
    for y in 1..h {
        for x in 1..w {
            for c in 0..3 {
                s += (grad(a, y, x, c) - grad(b, y, x, c)).abs();
            }
        }
    }
    if s == 0 {
        return f64::INFINITY;
    }
    let count = (3 * (h - 1) * (w - 1)) as f64;
    10.0 * (255.0f64 * 255.0 * count / s as f64).log10()
}

/// Full ordering by (distance, id) via exhaustive comparison.
pub fn knn(query: &Image, training: &[(String, Image)], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64, i64)> = training
        .iter()
        .map(|(id, img)| {
            let s: i64 = query.pixels.iter().zip(&img.pixels).map(|(&p, &q)| (p as i64 - q as i64).abs()).sum();
            (id.clone(), s as f64 / query.pixels.len() as f64, s)
        })
        .collect();
    // integer sums give an exact order
    let len = all.len();
    for i in 0..len {
        for j in 0..len - 1 - i {
            if (all[j].2, &all[j].0) > (all[j + 1].2, &all[j + 1].0) {
                all.swap(j, j + 1);
            }
        }
    }
    all.into_iter().take(k).map(|(id, d, _)| (id, d)).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Through the entropy identity `ln IS = H(mean row) - mean H(row)`.
pub fn inception_score(rows: &[Vec<f64>]) -> f64 {
    let n = rows[0].len();
    let m = rows.len() as f64;
    let marginal: Vec<f64> = (0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    let mean_h = rows.iter().map(|r| entropy(r)).sum::<f64>() / m;
    (entropy(&marginal) - mean_h).exp()
}

/// Mean and population std of `KL(gen row || q)` with `q` the real
/// marginal floored at 1e-12 and renormalized.
pub fn kl_model_data(gen: &[Vec<f64>], real: &[Vec<f64>]) -> (f64, f64) {
    let n = real[0].len();
    let m = real.len() as f64;
    let raw: Vec<f64> = (0..n).map(|j| (real.iter().map(|r| r[j]).sum::<f64>() / m).max(1e-12)).collect();
    let z: f64 = raw.iter().sum();
    let ln_q: Vec<f64> = raw.iter().map(|v| v.ln() - z.ln()).collect();
    let d: Vec<f64> = gen
        .iter()
        .map(|p| -entropy(p) - p.iter().zip(&ln_q).filter(|(pi, _)| **pi > 0.0).map(|(pi, l)| pi * l).sum::<f64>())
        .collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// Top-k by repeated selection of the first maximum, in rank order.
pub fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; p.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..p.len() {
            if !taken[i] && best.is_none_or(|b| p[i] > p[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// The smoothing epsilon, summing the kept mass in rank order.
pub fn smoothing_epsilon(p: &[f64], k: usize) -> f64 {
    let mut kept = 0.0;
    for i in top_k(p, k) {
        kept += p[i];
    }
    (1.0 - kept) / (p.len() - k) as f64
}

/// Random probability row of width `n`: a mix of dense, sparse, peaked and
/// one-hot rows.
pub fn random_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random::<f64>()).collect(),
        1 => (0..n).map(|_| if rng.random_bool(0.3) { rng.random::<f64>() } else { 0.0 }).collect(),
        2 => (0..n).map(|_| rng.random::<f64>().powi(8)).collect(),
        _ => {
            let mut v = vec![0.0; n];
            v[rng.random_range(0..n)] = 1.0;
            v
        }
    };
    if v.iter().all(|x| *x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}
