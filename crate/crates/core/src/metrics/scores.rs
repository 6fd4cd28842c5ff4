//! Scores computed from classifier probability rows.

use crate::error::{Error, Result};

/// Tolerance on row sums when checking that rows are distributions.
pub const ROW_SUM_TOL: f64 = 1e-6;
/// Floor applied to the real-data marginal before taking logs.
pub const MARGINAL_FLOOR: f64 = 1e-12;

/// Check that `rows` is a nonempty matrix of probability vectors of equal
/// width; returns the width.
pub fn check_distributions(rows: &[Vec<f64>]) -> Result<usize> {
    let n = rows.first().ok_or_else(|| Error::Empty("no prediction rows".into()))?.len();
    if n == 0 {
        return Err(Error::Empty("prediction rows have no classes".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::Shape(format!("row {i} has {} classes, expected {n}", r.len())));
        }
        check_distribution(r).map_err(|e| Error::Range(format!("row {i}: {e}")))?;
    }
    Ok(n)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Range(format!("probability {v} is negative or not finite")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Range(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// `sum p ln(p/q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

fn column_mean(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let len = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= len);
    m
}

/// `exp` of the mean KL between each row and the row mean.
pub fn inception_score(preds: &[Vec<f64>]) -> Result<f64> {
    let n = check_distributions(preds)?;
    let marginal = column_mean(preds, n);
    let mean_kl = preds.iter().map(|r| kl_divergence(r, &marginal)).sum::<f64>() / preds.len() as f64;
    // The mean KL here is a mutual information, so it lies in [0, ln n];
    // clamping only removes rounding residue.
    Ok(mean_kl.clamp(0.0, (n as f64).ln()).exp())
}

/// Indices of the `k` largest entries, largest first; equal values are
/// ranked by lower index.
pub fn top_k_indices(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keep the top `k` entries and spread the remaining mass evenly over the
/// other `n - k` classes.
pub fn topk_smooth(p: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = p.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k must be in 1..{n}, got {k}")));
    }
    check_distribution(p)?;
    let top = top_k_indices(p, k);
    let kept: f64 = top.iter().map(|&i| p[i]).sum();
    let eps = (1.0 - kept) / (n - k) as f64;
    let mut out = vec![eps; n];
    for &i in &top {
        out[i] = p[i];
    }
    Ok(out)
}

/// Smooth every row; `k >= n` leaves rows unchanged.
pub fn smooth_rows(rows: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| if k >= r.len() { Ok(r.clone()) } else { topk_smooth(r, k) })
        .collect()
}

/// Percentage of scenes whose real-image label (argmax of the real row) is
/// among the top `k` classes of the generated row. With `confidence_filter`
/// only scenes whose real top probability exceeds 0.5 count.
pub fn topk_accuracy(real: &[Vec<f64>], gen: &[Vec<f64>], k: usize, confidence_filter: bool) -> Result<f64> {
    if real.len() != gen.len() {
        return Err(Error::Shape(format!("{} real rows vs {} generated rows", real.len(), gen.len())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let n = check_distributions(real)?;
    if check_distributions(gen)? != n {
        return Err(Error::Shape("real and generated rows differ in width".into()));
    }
    let (mut hits, mut considered) = (0usize, 0usize);
    for (r, g) in real.iter().zip(gen) {
        let label = top_k_indices(r, 1)[0];
        if confidence_filter && r[label] <= 0.5 {
            continue;
        }
        considered += 1;
        if top_k_indices(g, k).contains(&label) {
            hits += 1;
        }
    }
    if considered == 0 {
        return Err(Error::Empty("no real rows pass the confidence filter".into()));
    }
    Ok(100.0 * hits as f64 / considered as f64)
}

/// Mean and population standard deviation over generated rows of
/// `KL(row || q)`, where `q` is the floored, renormalized real marginal.
pub fn kl_model_data(gen: &[Vec<f64>], real: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = check_distributions(real)?;
    if check_distributions(gen)? != n {
        return Err(Error::Shape("real and generated rows differ in width".into()));
    }
    let mut q = column_mean(real, n);
    q.iter_mut().for_each(|v| *v = v.max(MARGINAL_FLOOR));
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    let d: Vec<f64> = gen.iter().map(|p| kl_divergence(p, &q)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d.len() as f64;
    Ok((mean, var.sqrt()))
}
