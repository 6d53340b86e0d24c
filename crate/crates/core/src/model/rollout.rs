use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{LatentModel, NoiseSource, RolloutConfig, TerminationMode};
use crate::autodiff::{Tape, Tensor};
use crate::env::{LinearGaussianPolicy, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::nn::{Bound, RngStream};

/// One decoder branch taking part in a rollout, with its mixture weight.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub model: &'a LatentModel,
    pub branch: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    /// Mean of `returns`.
    pub estimate: f64,
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
}

/// Moments of one head in environment units, `rows x dim` each.
struct Moments {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn mix(parts: &[(f64, Moments)]) -> Moments {
    let len = parts[0].1.mean.len();
    let mut out = Moments {
        mean: alloc::vec![0.0; len],
        var: alloc::vec![0.0; len],
    };
    for (w, m) in parts {
        for i in 0..len {
            out.mean[i] += w * m.mean[i];
            out.var[i] += w * w * m.var[i];
        }
    }
    out
}

fn draw(m: &Moments, rng: &mut RngStream) -> Vec<f64> {
    m.mean
        .iter()
        .zip(&m.var)
        .map(|(mu, v)| mu + libm::sqrt(v.max(0.0)) * rng.normal())
        .collect()
}

fn to_state_units(model: &LatentModel, mean: &Tensor, var: &Tensor) -> Moments {
    let n = &model.normalizer;
    let cols = mean.cols();
    Moments {
        mean: mean
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * n.state_std[i % cols] + n.state_mean[i % cols])
            .collect(),
        var: var
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * n.state_std[i % cols] * n.state_std[i % cols])
            .collect(),
    }
}

fn to_reward_units(model: &LatentModel, mean: &Tensor, var: &Tensor) -> Moments {
    let n = &model.normalizer;
    Moments {
        mean: mean.data.iter().map(|&v| n.unreward(v)).collect(),
        var: var
            .data
            .iter()
            .map(|v| v * n.reward_std * n.reward_std)
            .collect(),
    }
}

/// Simulates `policy` inside the branched model: every branch starts from
/// its own prior latent draw, steps its recurrence on the shared actions,
/// and the per-step state, reward and termination heads are mixed with the
/// learned branch weights.
pub fn rollout(
    model: &LatentModel,
    policy: &LinearGaussianPolicy,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    let w = model.branch_weights();
    let members: Vec<Member> = (0..model.num_branches())
        .map(|b| Member {
            model,
            branch: b,
            weight: w[b],
        })
        .collect();
    rollout_members(&members, policy, cfg, rng)
}

/// Classic ensemble: each independently trained model rolls out in its own
/// latent space (first branch) and the heads are mixed with uniform weights.
pub fn rollout_ensemble(
    models: &[LatentModel],
    policy: &LinearGaussianPolicy,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    if models.is_empty() {
        return Err(invalid("an ensemble needs at least one model"));
    }
    let w = 1.0 / models.len() as f64;
    let members: Vec<Member> = models
        .iter()
        .map(|m| Member {
            model: m,
            branch: 0,
            weight: w,
        })
        .collect();
    rollout_members(&members, policy, cfg, rng)
}

/// Generic mixed rollout over an explicit member list.
///
/// Rewards are accumulated as `sum_{t>=1} gamma^(t-1) r_{t-1}`. When every
/// member models termination, an episode stops after the step whose
/// termination draw fires.
pub fn rollout_members(
    members: &[Member],
    policy: &LinearGaussianPolicy,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    cfg.validate()?;
    let first = members
        .first()
        .ok_or_else(|| invalid("a rollout needs at least one member"))?;
    let (sd, ad) = (first.model.config.state_dim, first.model.config.action_dim);
    for m in members {
        if m.model.config.state_dim != sd || m.model.config.action_dim != ad {
            return Err(invalid("ensemble members disagree on widths"));
        }
        if m.branch >= m.model.num_branches() {
            return Err(invalid(format!("member branch {} out of range", m.branch)));
        }
    }
    if policy.state_dim() != sd || policy.action_dim() != ad {
        return Err(Error::ShapeMismatch {
            op: "rollout_policy",
            lhs: alloc::vec![policy.state_dim(), policy.action_dim()],
            rhs: alloc::vec![sd, ad],
        });
    }
    let with_termination = members.iter().all(|m| m.model.config.termination);
    let e = cfg.episodes;

    let mut latent_noise = NoiseSource::Rng(rng.fork(0));
    let mut obs_rng = rng.fork(1);
    let mut policy_rng = rng.fork(2);
    let mut term_rng = rng.fork(3);

    // Bind each distinct model once; members index into `bounds`.
    let mut tape = Tape::new();
    let mut bounds: Vec<(*const LatentModel, Bound)> = Vec::new();
    let mut slot = Vec::with_capacity(members.len());
    for m in members {
        let ptr = m.model as *const LatentModel;
        let idx = match bounds.iter().position(|(p, _)| *p == ptr) {
            Some(i) => i,
            None => {
                bounds.push((ptr, m.model.store.bind(&mut tape)));
                bounds.len() - 1
            }
        };
        slot.push(idx);
    }
    let mark = tape.len();

    let mut z: Vec<Tensor> = members
        .iter()
        .map(|m| latent_noise.draw(e, m.model.config.latent_dim))
        .collect();
    let mut h: Vec<Tensor> = members
        .iter()
        .map(|m| Tensor::zeros(e, m.model.config.recurrent_dim))
        .collect();
    let mut c = h.clone();

    let mut parts = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        tape.truncate(mark);
        let zv = tape.constant(z[i].clone());
        let (state, _, _) = m.model.emit(m.branch, &mut tape, &bounds[slot[i]].1, zv)?;
        let mo = to_state_units(m.model, tape.value(state.mean), tape.value(state.var));
        parts.push((m.weight, mo));
    }
    let mut states = draw(&mix(&parts), &mut obs_rng);

    let mut returns = alloc::vec![0.0; e];
    let mut lengths = alloc::vec![0usize; e];
    let mut alive = alloc::vec![true; e];
    let mut discount = 1.0;
    for _ in 1..=cfg.horizon {
        if !alive.iter().any(|&a| a) {
            break;
        }
        let mut actions = Vec::with_capacity(e * ad);
        for row in 0..e {
            if alive[row] {
                actions.extend(policy.act(&states[row * sd..(row + 1) * sd], &mut policy_rng));
            } else {
                actions.extend(core::iter::repeat_n(0.0, ad));
            }
        }
        let actions = Tensor {
            shape: alloc::vec![e, ad],
            data: actions,
        };

        let mut state_parts = Vec::with_capacity(members.len());
        let mut reward_parts = Vec::with_capacity(members.len());
        let mut done_mean = alloc::vec![0.0; e];
        for (i, m) in members.iter().enumerate() {
            tape.truncate(mark);
            let bound = &bounds[slot[i]].1;
            let hv = tape.constant(h[i].clone());
            let cv = tape.constant(c[i].clone());
            let zv = tape.constant(z[i].clone());
            let av = tape.constant(actions.clone());
            let step = m.model.decode_step(
                m.branch,
                &mut tape,
                bound,
                hv,
                cv,
                zv,
                av,
                &mut latent_noise,
            )?;
            h[i] = tape.value(step.h).clone();
            c[i] = tape.value(step.c).clone();
            z[i] = tape.value(step.z).clone();
            state_parts.push((
                m.weight,
                to_state_units(
                    m.model,
                    tape.value(step.state.mean),
                    tape.value(step.state.var),
                ),
            ));
            reward_parts.push((
                m.weight,
                to_reward_units(
                    m.model,
                    tape.value(step.reward.mean),
                    tape.value(step.reward.var),
                ),
            ));
            if let (true, Some(d)) = (with_termination, step.termination) {
                for (acc, v) in done_mean.iter_mut().zip(&tape.value(d).data) {
                    *acc += m.weight * v;
                }
            }
        }
        states = draw(&mix(&state_parts), &mut obs_rng);
        let rewards = draw(&mix(&reward_parts), &mut obs_rng);
        for row in 0..e {
            if !alive[row] {
                continue;
            }
            returns[row] += discount * rewards[row];
            lengths[row] += 1;
            if with_termination {
                let p = done_mean[row].clamp(0.0, 1.0);
                let stop = match cfg.termination {
                    TerminationMode::Sample => term_rng.uniform() < p,
                    TerminationMode::Threshold => p >= 0.5,
                };
                if stop {
                    alive[row] = false;
                }
            }
        }
        discount *= cfg.gamma;
    }
    let estimate = returns.iter().sum::<f64>() / e as f64;
    Ok(RolloutResult {
        estimate,
        returns,
        lengths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub policy_id: String,
    pub t: usize,
    pub z: Vec<f64>,
}

/// Encoder means per visited state, tagged by the policy that produced
/// the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTable {
    pub latent_dim: usize,
    pub rows: Vec<LatentRow>,
}

impl LatentTable {
    pub fn header(&self) -> String {
        let mut h = String::from("policy_id,t");
        for j in 0..self.latent_dim {
            let _ = write!(h, ",z_{j}");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.policy_id, row.t);
            for v in &row.z {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Posterior means (zero noise) for every state of every trajectory.
pub fn export_latents(model: &LatentModel, items: &[(&str, &Trajectory)]) -> Result<LatentTable> {
    let mut rows = Vec::new();
    for (policy_id, traj) in items {
        for (t, z) in model.encode_means(traj)?.into_iter().enumerate() {
            rows.push(LatentRow {
                policy_id: String::from(*policy_id),
                t,
                z,
            });
        }
    }
    Ok(LatentTable {
        latent_dim: model.config.latent_dim,
        rows,
    })
}
