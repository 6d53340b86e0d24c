use alloc::vec::Vec;

use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Central-difference gradient `(f(p + h) - f(p - h)) / 2h`, one coordinate
/// at a time. `f` must be deterministic: any sampling noise has to be fixed
/// by the caller.
pub fn finite_diff<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(invalid("finite difference step must be positive"));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor {
            shape: params[p].shape.clone(),
            data: alloc::vec![0.0; params[p].numel()],
        };
        for i in 0..params[p].numel() {
            let orig = work[p].data[i];
            work[p].data[i] = orig + h;
            let up = f(&work)?;
            work[p].data[i] = orig - h;
            let down = f(&work)?;
            work[p].data[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite { op: "finite_diff" });
            }
            grad.data[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all coordinates.
///
/// The floor keeps coordinates whose true gradient is ~0 from dominating
/// through round-off in the finite difference.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data.iter().zip(&y.data))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
