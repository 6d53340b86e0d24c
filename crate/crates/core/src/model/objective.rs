use alloc::vec::Vec;

use super::{Batch, DecoderStart, LatentModel, ModelKind, NoiseSource};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    bernoulli_log_prob, gaussian_kl, gaussian_log_prob, reparam_sample, standard_normal, Bound,
    DiagGaussian,
};

/// How encoder and decoder recurrent states are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Mean over unordered coordinate pairs of the squared mismatch in
    /// pairwise differences.
    Pairwise,
    /// Plain mean squared error.
    Mse,
}

/// Named pieces of a training objective, all already averaged over the
/// trajectories of the batch.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms {
    /// Scalar to maximize.
    pub total: Var,
    /// Per-branch ELBO.
    pub elbo: Vec<Var>,
    /// Per-branch alignment loss; empty for the plain ELBO objective.
    pub rsa: Vec<Var>,
    /// Log-likelihood of the observations under the mixed heads (branched
    /// model only).
    pub mixed: Option<Var>,
}

/// `sum_r weights_r * loss_r` where `loss_r` compares row `r` of `h_tilde`
/// and `h` (both `R x M`) and `weights` is `R x 1`.
pub fn alignment_loss(
    tape: &mut Tape,
    h_tilde: Var,
    h: Var,
    weights: Var,
    kind: Alignment,
) -> Result<Var> {
    let (ta, tb) = (tape.value(h_tilde), tape.value(h));
    if ta.dims() != tb.dims() {
        return Err(Error::ShapeMismatch {
            op: "rsa",
            lhs: ta.shape.clone(),
            rhs: tb.shape.clone(),
        });
    }
    let m = ta.cols();
    if kind == Alignment::Pairwise && m < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "pairwise alignment needs at least 2 coordinates, got {m}"
        )));
    }
    let d = tape.sub(h_tilde, h)?;
    let sq = tape.square(d)?;
    let sum_sq = tape.row_sum(sq)?;
    let per_row = match kind {
        Alignment::Pairwise => {
            // sum_{j<k} (d_j - d_k)^2 = M sum d^2 - (sum d)^2
            let total = tape.row_sum(d)?;
            let total_sq = tape.square(total)?;
            let scaled = tape.scale(sum_sq, m as f64)?;
            let pairs = tape.sub(scaled, total_sq)?;
            tape.scale(pairs, 2.0 / (m * (m - 1)) as f64)?
        }
        Alignment::Mse => tape.scale(sum_sq, 1.0 / m as f64)?,
    };
    let weighted = tape.mul(per_row, weights)?;
    tape.sum(weighted)
}

/// Alignment loss of a single sequence, averaged over its steps.
pub fn rsa(tape: &mut Tape, h_tilde: &[Var], h: &[Var], kind: Alignment) -> Result<Var> {
    if h_tilde.len() != h.len() || h.is_empty() {
        return Err(Error::InvalidArgument(alloc::format!(
            "alignment needs equal nonempty sequences, got {} and {}",
            h_tilde.len(),
            h.len()
        )));
    }
    let a = tape.concat_rows(h_tilde)?;
    let b = tape.concat_rows(h)?;
    let rows = tape.value(a).rows();
    let w = tape.constant(crate::autodiff::Tensor::full(rows, 1, 1.0 / h.len() as f64));
    alignment_loss(tape, a, b, w, kind)
}

/// `sum(mask * x) * scale`.
fn masked_sum(tape: &mut Tape, x: Var, mask: Var, scale: f64) -> Result<Var> {
    let m = tape.mul(x, mask)?;
    let s = tape.sum(m)?;
    tape.scale(s, scale)
}

fn add_all(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

impl LatentModel {
    /// Builds the configured training objective for `batch`.
    ///
    /// Decoder recurrences and transition priors are conditioned on the
    /// encoder's latent samples. The mixed observation term of the branched
    /// model uses each branch's own latent samples: a prior draw at `t = 0`
    /// and a draw from its transition head afterwards.
    pub fn objective(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        noise: &mut NoiseSource,
    ) -> Result<ObjectiveTerms> {
        let cfg = &self.config;
        let (n, l, steps) = (batch.rows, cfg.latent_dim, batch.steps);
        let inv_n = 1.0 / n as f64;
        let enc = self.encode(tape, bound, batch, noise)?;

        let z_all = tape.concat_rows(&enc.z)?;
        let s_all = tape.constant(Batch::stack(&batch.states));
        let mask_all = tape.constant(Batch::stack(&batch.mask));
        let done_all = tape.constant(Batch::stack(&batch.done));
        let std0 = standard_normal(tape, n, l);
        let kl0 = gaussian_kl(tape, enc.posterior[0], std0)?;
        let kl0 = tape.sum(kl0)?;
        let kl0 = tape.scale(kl0, inv_n)?;

        struct Stepwise {
            z: Var,
            rewards: Var,
            mask: Var,
            post: DiagGaussian,
            h_enc: Var,
            align_w: Var,
        }
        let stepwise = if steps > 0 {
            let means: Vec<Var> = enc.posterior[1..].iter().map(|q| q.mean).collect();
            let vars: Vec<Var> = enc.posterior[1..].iter().map(|q| q.var).collect();
            let mut w = batch.alignment_weights();
            w.data.iter_mut().for_each(|v| *v *= inv_n);
            Some(Stepwise {
                z: tape.concat_rows(&enc.z[1..])?,
                rewards: tape.constant(Batch::stack(&batch.rewards)),
                mask: tape.constant(Batch::stack(&batch.mask[1..])),
                post: DiagGaussian {
                    mean: tape.concat_rows(&means)?,
                    var: tape.concat_rows(&vars)?,
                },
                h_enc: tape.concat_rows(&enc.h)?,
                align_w: tape.constant(w),
            })
        } else {
            None
        };

        let branched = cfg.kind == ModelKind::Vlbm;
        let alignment = match cfg.kind {
            ModelKind::Vlm => None,
            ModelKind::VlmRsaMse => Some(Alignment::Mse),
            ModelKind::VlmRsa | ModelKind::Vlbm => Some(Alignment::Pairwise),
        };
        let mut elbos = Vec::with_capacity(self.branches.len());
        let mut rsas = Vec::new();
        let mut mixed_states = Vec::new();
        let mut mixed_done = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            let prior_z0 = if branched || cfg.decoder_start == DecoderStart::Prior {
                Some(tape.constant(noise.draw(n, l)))
            } else {
                None
            };
            let (state, _, term) = self.emit(b, tape, bound, z_all)?;
            let lp_s = gaussian_log_prob(tape, state, s_all)?;
            let mut parts = alloc::vec![masked_sum(tape, lp_s, mask_all, inv_n)?];
            let neg_kl0 = tape.neg(kl0)?;
            parts.push(neg_kl0);
            if let Some(term) = term {
                let lp_d = bernoulli_log_prob(tape, term, done_all)?;
                parts.push(masked_sum(tape, lp_d, mask_all, inv_n)?);
            }
            let mut prior = None;
            if let Some(sw) = &stepwise {
                let mut inputs = Vec::with_capacity(steps);
                inputs.push(match (cfg.decoder_start, prior_z0) {
                    (DecoderStart::Prior, Some(z)) => z,
                    _ => enc.z[0],
                });
                inputs.extend_from_slice(&enc.z[1..steps]);
                let hs = self.teacher_forced(b, tape, bound, batch, &inputs)?;
                let h = tape.concat_rows(&hs)?;
                let h_tilde = branch.map.forward(tape, bound, h)?;
                let p = branch.transition.forward(tape, bound, h_tilde)?;
                prior = Some(p);
                let reward = branch.reward.forward(tape, bound, sw.z)?;
                let lp_r = gaussian_log_prob(tape, reward, sw.rewards)?;
                parts.push(masked_sum(tape, lp_r, sw.mask, inv_n)?);
                let kl = gaussian_kl(tape, sw.post, p)?;
                let kl = masked_sum(tape, kl, sw.mask, inv_n)?;
                parts.push(tape.neg(kl)?);
                if let Some(kind) = alignment {
                    rsas.push(alignment_loss(tape, h_tilde, sw.h_enc, sw.align_w, kind)?);
                }
            } else if alignment.is_some() {
                rsas.push(tape.scalar(0.0));
            }
            elbos.push(add_all(tape, &parts)?);

            if branched {
                let mut zb = alloc::vec![prior_z0.unwrap()];
                if let Some(p) = prior {
                    let (rows, _) = tape.value(p.mean).dims();
                    let eps = tape.constant(noise.draw(rows, l));
                    zb.push(reparam_sample(tape, p, eps)?);
                }
                let zb = tape.concat_rows(&zb)?;
                let (state_b, _, term_b) = self.emit(b, tape, bound, zb)?;
                mixed_states.push(state_b);
                if let Some(t) = term_b {
                    mixed_done.push(t);
                }
            }
        }

        let (total, mixed) = if branched {
            let w = self.weights_var(tape, bound)?;
            let mix = super::mix_gaussian(tape, &mixed_states, w)?;
            let lp = gaussian_log_prob(tape, mix, s_all)?;
            let mut mixed = masked_sum(tape, lp, mask_all, inv_n)?;
            if !mixed_done.is_empty() {
                let d = super::mix_bernoulli(tape, &mixed_done, w)?;
                let lp_d = bernoulli_log_prob(tape, d, done_all)?;
                let lp_d = masked_sum(tape, lp_d, mask_all, inv_n)?;
                mixed = tape.add(mixed, lp_d)?;
            }
            let sum_rsa = add_all(tape, &rsas)?;
            let sum_elbo = add_all(tape, &elbos)?;
            let pen = tape.scale(sum_rsa, cfg.rsa_weight)?;
            let bonus = tape.scale(sum_elbo, cfg.elbo_weight)?;
            let t = tape.sub(mixed, pen)?;
            (tape.add(t, bonus)?, Some(mixed))
        } else if let Some(&r) = rsas.first() {
            let pen = tape.scale(r, cfg.rsa_weight)?;
            (tape.sub(elbos[0], pen)?, None)
        } else {
            (elbos[0], None)
        };
        Ok(ObjectiveTerms {
            total,
            elbo: elbos,
            rsa: rsas,
            mixed,
        })
    }

    /// Value of the training objective at fixed noise, without gradients.
    pub fn evaluate(&self, batch: &Batch, noise: &mut NoiseSource) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let terms = self.objective(&mut tape, &bound, batch, noise)?;
        Ok(tape.item(terms.total))
    }
}
