//! Autoregressive ensemble baseline: each member factorizes the next state
//! and the reward dimension by dimension,
//! `p(y_j | s_t, a_t, y_0 .. y_{j-1})` with `y = (s_{t+1}, r_t)`, and the
//! members are mixed with the same gate as the decoder branches.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, lr_schedule, AdamState, Tape, Tensor, Var};
use crate::env::{Dataset, LinearGaussianPolicy, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::model::{
    branch_weights, gate_weights, mix_gaussian, sample_minibatch, Normalizer, RolloutConfig,
    RolloutResult, TrainConfig, TrainLog, GATE_INIT,
};
use crate::nn::{
    gaussian_log_prob, Bound, DiagGaussian, GaussianHead, ParamId, ParamStore, RngStream,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub members: usize,
    pub mlp_hidden: Vec<usize>,
    pub gate_eps: f64,
    /// Weight of the per-member log-likelihoods next to the mixed one.
    pub member_weight: f64,
}

impl ArConfig {
    /// Ten members with `128-64` hidden layers.
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        ArConfig {
            state_dim,
            action_dim,
            members: 10,
            mlp_hidden: alloc::vec![128, 64],
            gate_eps: 1e-8,
            member_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 || self.state_dim == 0 || self.action_dim == 0 {
            return Err(invalid("members, state and action widths must be positive"));
        }
        if !(self.gate_eps > 0.0) || !(self.member_weight >= 0.0) {
            return Err(invalid(
                "gate epsilon must be positive and member weight nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ArEnsemble {
    pub config: ArConfig,
    pub normalizer: Normalizer,
    pub store: ParamStore,
    /// `heads[m][j]` predicts output dimension `j` for member `m`; the last
    /// dimension is the reward.
    pub heads: Vec<Vec<GaussianHead>>,
    pub gate: ParamId,
    /// Empirical initial states the rollouts start from.
    pub initial_states: Vec<Vec<f64>>,
}

/// Transitions of a set of trajectories in standardized units.
#[derive(Debug, Clone)]
pub struct Transitions {
    /// `N x (state_dim + action_dim)`: `s_t` then `a_t`.
    pub inputs: Tensor,
    /// `N x (state_dim + 1)`: `s_{t+1}` then `r_t`.
    pub outputs: Tensor,
}

impl Transitions {
    pub fn new(trajs: &[&Trajectory], norm: &Normalizer) -> Result<Self> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        let mut n = 0;
        let (mut xw, mut yw) = (0, 0);
        for tr in trajs {
            tr.validate()?;
            for t in 0..tr.len() {
                let s = norm.state(&tr.states[t]);
                let s1 = norm.state(&tr.states[t + 1]);
                xw = s.len() + tr.actions[t].len();
                yw = s1.len() + 1;
                x.extend(s);
                x.extend_from_slice(&tr.actions[t]);
                y.extend(s1);
                y.push(norm.reward(tr.rewards[t]));
                n += 1;
            }
        }
        if n == 0 {
            return Err(invalid("no transitions to fit"));
        }
        Ok(Transitions {
            inputs: Tensor::new(alloc::vec![n, xw], x)?,
            outputs: Tensor::new(alloc::vec![n, yw], y)?,
        })
    }
}

impl ArEnsemble {
    pub fn new(
        config: ArConfig,
        normalizer: Normalizer,
        initial_states: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if initial_states.is_empty() || initial_states.iter().any(|s| s.len() != config.state_dim) {
            return Err(invalid(
                "initial states must be nonempty and match the state width",
            ));
        }
        let mut store = ParamStore::new();
        let (ds, da) = (config.state_dim, config.action_dim);
        let mut heads = Vec::with_capacity(config.members);
        for m in 0..config.members {
            // Member `m` is initialized from its own seed.
            let mut rng = RngStream::new(seed).fork(m as u64);
            let member = (0..=ds)
                .map(|j| {
                    let mut dims = alloc::vec![ds + da + j];
                    dims.extend_from_slice(&config.mlp_hidden);
                    dims.push(1);
                    GaussianHead::new(&mut store, &format!("ar{m}.dim{j}"), &dims, &mut rng)
                })
                .collect();
            heads.push(member);
        }
        let gate = store.add("gate.v", Tensor::full(1, config.members, GATE_INIT));
        Ok(ArEnsemble {
            config,
            normalizer,
            store,
            heads,
            gate,
            initial_states,
        })
    }

    /// Fresh ensemble with normalizer and initial states taken from `data`.
    pub fn for_dataset(config: ArConfig, data: &Dataset, seed: u64) -> Result<Self> {
        if data.trajectories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let init = data
            .trajectories
            .iter()
            .map(|t| t.states[0].clone())
            .collect();
        ArEnsemble::new(config, Normalizer::fit(data), init, seed)
    }

    pub fn from_store(
        config: ArConfig,
        normalizer: Normalizer,
        initial_states: Vec<Vec<f64>>,
        store: ParamStore,
    ) -> Result<Self> {
        let mut e = ArEnsemble::new(config, normalizer, initial_states, 0)?;
        if e.store.names() != store.names()
            || e.store
                .tensors()
                .iter()
                .zip(store.tensors())
                .any(|(a, b)| a.shape != b.shape)
        {
            return Err(invalid("parameters do not match the configured ensemble"));
        }
        e.store = store;
        Ok(e)
    }

    pub fn branch_weights(&self) -> Vec<f64> {
        gate_weights(&self.store.get(self.gate).data, self.config.gate_eps)
    }

    /// One-member ensemble holding a copy of member `m`.
    pub fn member(&self, m: usize) -> Result<ArEnsemble> {
        if m >= self.config.members {
            return Err(invalid(format!("member {m} out of range")));
        }
        let cfg = ArConfig {
            members: 1,
            ..self.config.clone()
        };
        let mut single =
            ArEnsemble::new(cfg, self.normalizer.clone(), self.initial_states.clone(), 0)?;
        let prefix = format!("ar{m}.");
        for (i, name) in single.store.names().to_vec().iter().enumerate() {
            let source = match name.strip_prefix("ar0.") {
                Some(rest) => format!("{prefix}{rest}"),
                None => name.clone(),
            };
            let id = self
                .store
                .find(&source)
                .ok_or_else(|| invalid(format!("missing {source}")))?;
            single.store.tensors_mut()[i] = self.store.get(id).clone();
        }
        Ok(single)
    }

    /// Per-member head for output dimension `j` given inputs and the
    /// preceding output columns.
    fn head(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        m: usize,
        j: usize,
        input: Var,
    ) -> Result<DiagGaussian> {
        self.heads[m][j].forward(tape, bound, input)
    }

    /// Mixed log-likelihood plus `member_weight` times the sum of member
    /// log-likelihoods, averaged over transitions.
    pub fn objective(&self, tape: &mut Tape, bound: &Bound, data: &Transitions) -> Result<Var> {
        let (ds, da) = (self.config.state_dim, self.config.action_dim);
        if data.inputs.cols() != ds + da || data.outputs.cols() != ds + 1 {
            return Err(Error::ShapeMismatch {
                op: "ar_objective",
                lhs: alloc::vec![data.inputs.cols(), data.outputs.cols()],
                rhs: alloc::vec![ds + da, ds + 1],
            });
        }
        let n = data.inputs.rows();
        let x = tape.constant(data.inputs.clone());
        let y = tape.constant(data.outputs.clone());
        let w = branch_weights(tape, bound.var(self.gate), self.config.gate_eps)?;
        let mut mixed_total: Option<Var> = None;
        let mut member_total: Option<Var> = None;
        for j in 0..=ds {
            let input = if j == 0 {
                x
            } else {
                let prev = tape.slice(y, 0, j)?;
                tape.concat(&[x, prev])?
            };
            let target = tape.slice(y, j, j + 1)?;
            let mut heads = Vec::with_capacity(self.config.members);
            for m in 0..self.config.members {
                let h = self.head(tape, bound, m, j, input)?;
                let lp = gaussian_log_prob(tape, h, target)?;
                let lp = tape.sum(lp)?;
                member_total = Some(match member_total {
                    Some(acc) => tape.add(acc, lp)?,
                    None => lp,
                });
                heads.push(h);
            }
            let mix = mix_gaussian(tape, &heads, w)?;
            let lp = gaussian_log_prob(tape, mix, target)?;
            let lp = tape.sum(lp)?;
            mixed_total = Some(match mixed_total {
                Some(acc) => tape.add(acc, lp)?,
                None => lp,
            });
        }
        let members = tape.scale(member_total.unwrap(), self.config.member_weight)?;
        let total = tape.add(mixed_total.unwrap(), members)?;
        tape.scale(total, 1.0 / n as f64)
    }
}

/// Fits the ensemble with Adam on minibatches of trajectories.
pub fn ar_train(
    model: &mut ArEnsemble,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<TrainLog>> {
    if data.trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut state = AdamState::new(model.store.tensors());
    let mut log = Vec::with_capacity(cfg.max_iter);
    for iter in 0..cfg.max_iter {
        let idx = sample_minibatch(data.trajectories.len(), cfg.batch_size, rng);
        let trajs: Vec<&Trajectory> = idx.iter().map(|&i| &data.trajectories[i]).collect();
        let lr = lr_schedule(cfg.lr, cfg.lr_decay, iter);
        let Ok(batch) = Transitions::new(&trajs, &model.normalizer) else {
            log.push(TrainLog {
                iter,
                objective: 0.0,
                lr,
            });
            continue;
        };
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let result = model.objective(&mut tape, &bound, &batch).and_then(|obj| {
            let loss = tape.neg(obj)?;
            let g = tape.backward(loss)?;
            Ok((tape.item(obj), bound.grads(&g)))
        });
        let (objective, grads) = match result {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { iter }),
            Err(e) => return Err(e),
        };
        if !objective.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iter });
        }
        adam_step(model.store.tensors_mut(), &grads, &mut state, lr, &cfg.adam)?;
        log.push(TrainLog {
            iter,
            objective,
            lr,
        });
    }
    Ok(log)
}

/// Rolls `policy` out in the ensemble with explicit member weights.
pub fn ar_rollout_weighted(
    model: &ArEnsemble,
    weights: &[f64],
    policy: &LinearGaussianPolicy,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    cfg.validate()?;
    let (ds, da) = (model.config.state_dim, model.config.action_dim);
    if weights.len() != model.config.members {
        return Err(invalid("one weight per member is required"));
    }
    if policy.state_dim() != ds || policy.action_dim() != da {
        return Err(Error::ShapeMismatch {
            op: "ar_rollout_policy",
            lhs: alloc::vec![policy.state_dim(), policy.action_dim()],
            rhs: alloc::vec![ds, da],
        });
    }
    let e = cfg.episodes;
    let mut init_rng = rng.fork(0);
    let mut obs_rng = rng.fork(1);
    let mut policy_rng = rng.fork(2);
    let norm = &model.normalizer;

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let mark = tape.len();

    let mut states: Vec<Vec<f64>> = (0..e)
        .map(|_| model.initial_states[init_rng.below(model.initial_states.len())].clone())
        .collect();
    let mut returns = alloc::vec![0.0; e];
    let mut discount = 1.0;
    for _ in 0..cfg.horizon {
        let mut x = Vec::with_capacity(e * (ds + da));
        for s in &states {
            let a = policy.act(s, &mut policy_rng);
            x.extend(norm.state(s));
            x.extend(a);
        }
        let x = Tensor::new(alloc::vec![e, ds + da], x)?;
        let mut y = alloc::vec![0.0; e * (ds + 1)];
        for j in 0..=ds {
            tape.truncate(mark);
            let mut input = x.clone();
            if j > 0 {
                let mut data = Vec::with_capacity(e * (ds + da + j));
                for r in 0..e {
                    data.extend_from_slice(x.row_slice(r));
                    data.extend_from_slice(&y[r * (ds + 1)..r * (ds + 1) + j]);
                }
                input = Tensor::new(alloc::vec![e, ds + da + j], data)?;
            }
            let iv = tape.constant(input);
            let mut mean = alloc::vec![0.0; e];
            let mut var = alloc::vec![0.0; e];
            for (m, &w) in weights.iter().enumerate() {
                let h = model.head(&mut tape, &bound, m, j, iv)?;
                for r in 0..e {
                    mean[r] += w * tape.value(h.mean).data[r];
                    var[r] += w * w * tape.value(h.var).data[r];
                }
            }
            for r in 0..e {
                y[r * (ds + 1) + j] = mean[r] + libm::sqrt(var[r].max(0.0)) * obs_rng.normal();
            }
        }
        for r in 0..e {
            let row = &y[r * (ds + 1)..(r + 1) * (ds + 1)];
            states[r] = norm.unstate(&row[..ds]);
            returns[r] += discount * norm.unreward(row[ds]);
        }
        discount *= cfg.gamma;
    }
    Ok(RolloutResult {
        estimate: returns.iter().sum::<f64>() / e as f64,
        returns,
        lengths: alloc::vec![cfg.horizon; e],
    })
}

/// Rolls `policy` out with the learned gate weights; initial states are
/// drawn from the dataset's initial states.
pub fn ar_rollout(
    model: &ArEnsemble,
    policy: &LinearGaussianPolicy,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    ar_rollout_weighted(model, &model.branch_weights(), policy, cfg, rng)
}
