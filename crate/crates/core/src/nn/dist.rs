use alloc::format;

use serde::{Deserialize, Serialize};

use super::{Bound, Head, Mlp, ParamStore, RngStream};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Additive floor applied to variances before they enter a log or a division.
pub const VAR_FLOOR: f64 = 1e-8;
/// Bernoulli means are squeezed into `[BERNOULLI_CLIP, 1 - BERNOULLI_CLIP]`
/// before taking logs.
pub const BERNOULLI_CLIP: f64 = 1e-7;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian over the columns of `mean`, one distribution per row.
#[derive(Debug, Clone, Copy)]
pub struct DiagGaussian {
    pub mean: Var,
    pub var: Var,
}

/// Paired MLPs producing a mean (linear output) and a diagonal variance
/// (softplus output).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Mlp,
    pub var: Mlp,
}

impl GaussianHead {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut RngStream) -> Self {
        GaussianHead {
            mean: Mlp::new(store, &format!("{name}.mean"), dims, Head::Linear, rng),
            var: Mlp::new(store, &format!("{name}.var"), dims, Head::Softplus, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<DiagGaussian> {
        Ok(DiagGaussian {
            mean: self.mean.forward(tape, bound, x)?,
            var: self.var.forward(tape, bound, x)?,
        })
    }
}

/// `N(0, I)` with `rows x cols` constant parameters.
pub fn standard_normal(tape: &mut Tape, rows: usize, cols: usize) -> DiagGaussian {
    DiagGaussian {
        mean: tape.constant(Tensor::zeros(rows, cols)),
        var: tape.constant(Tensor::full(rows, cols, 1.0)),
    }
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.dims() != tb.dims() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: ta.shape.clone(),
            rhs: tb.shape.clone(),
        });
    }
    Ok(())
}

/// `mean + sqrt(var) * noise`, differentiable in the head parameters.
pub fn reparam_sample(tape: &mut Tape, d: DiagGaussian, noise: Var) -> Result<Var> {
    same_shape(tape, "reparam_sample", d.mean, noise)?;
    let lv = tape.log(d.var)?;
    let half = tape.scale(lv, 0.5)?;
    let sd = tape.exp(half)?;
    let scaled = tape.mul(sd, noise)?;
    tape.add(d.mean, scaled)
}

/// Draws a reparameterized sample with fresh noise from `rng`.
pub fn sample_with(tape: &mut Tape, d: DiagGaussian, rng: &mut RngStream) -> Result<Var> {
    let (r, c) = tape.value(d.mean).dims();
    let noise = tape.constant(rng.normal_tensor(r, c));
    reparam_sample(tape, d, noise)
}

/// Per-row log density, returned as a `rows x 1` column.
pub fn gaussian_log_prob(tape: &mut Tape, d: DiagGaussian, x: Var) -> Result<Var> {
    same_shape(tape, "gaussian_log_prob", d.mean, x)?;
    let v = tape.add_scalar(d.var, VAR_FLOOR)?;
    let lv = tape.log(v)?;
    let diff = tape.sub(x, d.mean)?;
    let sq = tape.square(diff)?;
    let quad = tape.div_positive(sq, v)?;
    let inner = tape.add(lv, quad)?;
    let inner = tape.add_scalar(inner, LN_2PI)?;
    let per_dim = tape.scale(inner, -0.5)?;
    tape.row_sum(per_dim)
}

/// Closed-form `KL(q || p)` per row, as a `rows x 1` column.
pub fn gaussian_kl(tape: &mut Tape, q: DiagGaussian, p: DiagGaussian) -> Result<Var> {
    same_shape(tape, "gaussian_kl", q.mean, p.mean)?;
    let vq = tape.add_scalar(q.var, VAR_FLOOR)?;
    let vp = tape.add_scalar(p.var, VAR_FLOOR)?;
    let lq = tape.log(vq)?;
    let lp = tape.log(vp)?;
    let log_ratio = tape.sub(lp, lq)?;
    let diff = tape.sub(q.mean, p.mean)?;
    let sq = tape.square(diff)?;
    let num = tape.add(vq, sq)?;
    let frac = tape.div_positive(num, vp)?;
    let inner = tape.add(log_ratio, frac)?;
    let inner = tape.add_scalar(inner, -1.0)?;
    let per_dim = tape.scale(inner, 0.5)?;
    tape.row_sum(per_dim)
}

/// `y log m + (1 - y) log(1 - m)` per row, with `m` squeezed away from 0
/// and 1 by [`BERNOULLI_CLIP`].
pub fn bernoulli_log_prob(tape: &mut Tape, mean: Var, outcome: Var) -> Result<Var> {
    same_shape(tape, "bernoulli_log_prob", mean, outcome)?;
    let m = tape.scale(mean, 1.0 - 2.0 * BERNOULLI_CLIP)?;
    let m = tape.add_scalar(m, BERNOULLI_CLIP)?;
    let log_m = tape.log(m)?;
    let neg_m = tape.neg(m)?;
    let one_minus = tape.add_scalar(neg_m, 1.0)?;
    let log_1m = tape.log(one_minus)?;
    let pos = tape.mul(outcome, log_m)?;
    let neg_y = tape.neg(outcome)?;
    let not_y = tape.add_scalar(neg_y, 1.0)?;
    let neg = tape.mul(not_y, log_1m)?;
    let lp = tape.add(pos, neg)?;
    tape.row_sum(lp)
}
