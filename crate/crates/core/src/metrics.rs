//! Scores for a vector of estimated policy values against ground truth.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

fn check_lengths(est: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if est.len() != truth.len() {
        return Err(invalid(alloc::format!(
            "estimate and truth lengths differ ({} vs {})",
            est.len(),
            truth.len()
        )));
    }
    if est.len() < min {
        return Err(invalid(alloc::format!(
            "need at least {min} policies, got {}",
            est.len()
        )));
    }
    Ok(())
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / libm::sqrt(va * vb)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation. `Ok(None)` when either vector is constant,
/// where the coefficient is undefined.
pub fn spearman(est: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_lengths(est, truth, 2)?;
    Ok(pearson(&ranks(est), &ranks(truth)))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// `(raw, normalized)` regret of picking the policy with the highest
/// estimate. Normalized regret divides by the range of true values and is
/// 0 when that range is 0.
pub fn regret_at_1(est: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_lengths(est, truth, 1)?;
    let best = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = best - truth[argmax(est)];
    let range = best - worst;
    Ok((raw, if range > 0.0 { raw / range } else { 0.0 }))
}

/// Mean absolute error.
pub fn mae(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth, 1)?;
    Ok(est
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / est.len() as f64)
}
