use alloc::format;
use alloc::vec::Vec;

use super::{Batch, ModelConfig, NoiseSource, Normalizer};
use crate::autodiff::{Tape, Tensor, Var};
use crate::env::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    reparam_sample, Bound, DiagGaussian, GaussianHead, Head, Lstm, Mlp, ParamId, ParamStore,
    RngStream,
};

/// Initial value of every gate scalar `v_b`.
pub const GATE_INIT: f64 = 0.5;

/// Inference network: `q(z_0 | s_0)` and `q(z_t | h_t)` with
/// `h_t = f(h_{t-1}, z_{t-1}, a_{t-1}, s_t)`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub init: GaussianHead,
    pub cell: Lstm,
    pub post: GaussianHead,
}

/// One decoder branch: recurrence over `(z_{t-1}, a_{t-1})`, the mapping
/// `g` from `h` to `h~`, and the generative heads.
#[derive(Debug, Clone)]
pub struct Branch {
    pub cell: Lstm,
    pub map: Mlp,
    pub transition: GaussianHead,
    pub state: GaussianHead,
    pub reward: GaussianHead,
    pub termination: Option<Mlp>,
}

/// Encoder plus `B` decoder branches and their mixture gate.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub branches: Vec<Branch>,
    /// The `1 x B` gate scalars `v`.
    pub gate: ParamId,
}

/// Encoder outputs for a batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `z_0 .. z_T`.
    pub z: Vec<Var>,
    /// `q(z_0 | s_0)` followed by `q(z_t | h_t)` for `t = 1..=T`.
    pub posterior: Vec<DiagGaussian>,
    /// `h_1 .. h_T`.
    pub h: Vec<Var>,
}

/// One generative step of a single branch.
#[derive(Debug, Clone, Copy)]
pub struct DecodedStep {
    pub h: Var,
    pub c: Var,
    pub h_tilde: Var,
    pub transition: DiagGaussian,
    pub z: Var,
    pub state: DiagGaussian,
    pub reward: DiagGaussian,
    pub termination: Option<Var>,
}

/// `w_b = v_b^2 / (eps + sum v^2)` on plain numbers.
pub fn gate_weights(v: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x * x).sum();
    v.iter().map(|x| x * x / (eps + total)).collect()
}

/// Differentiable [`gate_weights`] over a `1 x B` row.
pub fn branch_weights(tape: &mut Tape, v: Var, eps: f64) -> Result<Var> {
    let sq = tape.square(v)?;
    let total = tape.sum(sq)?;
    let denom = tape.add_scalar(total, eps)?;
    tape.div_positive(sq, denom)
}

fn check_weights(tape: &Tape, op: &'static str, w: Var, count: usize) -> Result<()> {
    let shape = &tape.value(w).shape;
    if tape.value(w).dims() != (1, count) || count == 0 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.clone(),
            rhs: alloc::vec![1, count],
        });
    }
    Ok(())
}

/// Moment-matched mixture `mean = sum w_b mean_b`, `var = sum w_b^2 var_b`.
pub fn mix_gaussian(tape: &mut Tape, heads: &[DiagGaussian], w: Var) -> Result<DiagGaussian> {
    check_weights(tape, "mix_gaussian", w, heads.len())?;
    let dims = tape.value(heads[0].mean).dims();
    let mut mean = None;
    let mut var = None;
    for (b, head) in heads.iter().enumerate() {
        let hd = tape.value(head.mean).dims();
        if hd != dims || tape.value(head.var).dims() != dims {
            return Err(Error::ShapeMismatch {
                op: "mix_gaussian",
                lhs: alloc::vec![dims.0, dims.1],
                rhs: tape.value(head.var).shape.clone(),
            });
        }
        let wb = tape.slice(w, b, b + 1)?;
        let wb2 = tape.square(wb)?;
        let m = tape.mul(wb, head.mean)?;
        let v = tape.mul(wb2, head.var)?;
        mean = Some(match mean {
            Some(acc) => tape.add(acc, m)?,
            None => m,
        });
        var = Some(match var {
            Some(acc) => tape.add(acc, v)?,
            None => v,
        });
    }
    Ok(DiagGaussian {
        mean: mean.unwrap(),
        var: var.unwrap(),
    })
}

/// `sum w_b mean_b`. With means in `(0, 1)` and `sum w <= 1` the result
/// already lies in `[0, 1)`; log-likelihoods squeeze it away from the ends.
pub fn mix_bernoulli(tape: &mut Tape, means: &[Var], w: Var) -> Result<Var> {
    check_weights(tape, "mix_bernoulli", w, means.len())?;
    let mut acc: Option<Var> = None;
    for (b, &m) in means.iter().enumerate() {
        let wb = tape.slice(w, b, b + 1)?;
        let term = tape.mul(wb, m)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap())
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = alloc::vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl LatentModel {
    pub fn new(config: ModelConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalizer.state_mean.len() != config.state_dim {
            return Err(invalid("normalizer width differs from the state width"));
        }
        let mut rng = RngStream::new(seed);
        let mut store = ParamStore::new();
        let (ds, da, l, m, dense) = (
            config.state_dim,
            config.action_dim,
            config.latent_dim,
            config.recurrent_dim,
            config.dense_dim,
        );
        let hidden = &config.mlp_hidden;
        let encoder = Encoder {
            init: GaussianHead::new(&mut store, "enc.init", &widths(ds, hidden, l), &mut rng),
            cell: Lstm::new(&mut store, "enc.lstm", l + da + ds, m, &mut rng),
            post: GaussianHead::new(&mut store, "enc.post", &[m, dense, l], &mut rng),
        };
        let branches = (0..config.branches)
            .map(|b| {
                let p = format!("branch{b}");
                Branch {
                    cell: Lstm::new(&mut store, &format!("{p}.lstm"), l + da, m, &mut rng),
                    map: Mlp::new(
                        &mut store,
                        &format!("{p}.map"),
                        &[m, m, m],
                        Head::Linear,
                        &mut rng,
                    ),
                    transition: GaussianHead::new(
                        &mut store,
                        &format!("{p}.transition"),
                        &[m, dense, l],
                        &mut rng,
                    ),
                    state: GaussianHead::new(
                        &mut store,
                        &format!("{p}.state"),
                        &widths(l, hidden, ds),
                        &mut rng,
                    ),
                    reward: GaussianHead::new(
                        &mut store,
                        &format!("{p}.reward"),
                        &widths(l, hidden, 1),
                        &mut rng,
                    ),
                    termination: config.termination.then(|| {
                        Mlp::new(
                            &mut store,
                            &format!("{p}.termination"),
                            &widths(l, hidden, 1),
                            Head::Sigmoid,
                            &mut rng,
                        )
                    }),
                }
            })
            .collect();
        let gate = store.add("gate.v", Tensor::full(1, config.branches, GATE_INIT));
        Ok(LatentModel {
            config,
            normalizer,
            store,
            encoder,
            branches,
            gate,
        })
    }

    /// Rebuilds a model around previously trained parameters. Names and
    /// shapes must match what `config` lays out.
    pub fn from_store(
        config: ModelConfig,
        normalizer: Normalizer,
        store: ParamStore,
    ) -> Result<Self> {
        let mut model = LatentModel::new(config, normalizer, 0)?;
        if model.store.names() != store.names() {
            return Err(invalid(
                "parameter names do not match the configured architecture",
            ));
        }
        for (a, b) in model.store.tensors().iter().zip(store.tensors()) {
            if a.shape != b.shape {
                return Err(Error::ShapeMismatch {
                    op: "from_store",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    /// Current mixture weights `w`.
    pub fn branch_weights(&self) -> Vec<f64> {
        gate_weights(&self.store.get(self.gate).data, self.config.gate_eps)
    }

    pub fn weights_var(&self, tape: &mut Tape, bound: &Bound) -> Result<Var> {
        branch_weights(tape, bound.var(self.gate), self.config.gate_eps)
    }

    /// Runs the inference network over a batch.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        noise: &mut NoiseSource,
    ) -> Result<Encoded> {
        let (n, l, m) = (
            batch.rows,
            self.config.latent_dim,
            self.config.recurrent_dim,
        );
        if batch.state_dim() != self.config.state_dim
            || (batch.steps > 0 && batch.action_dim() != self.config.action_dim)
        {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: alloc::vec![batch.state_dim(), batch.action_dim()],
                rhs: alloc::vec![self.config.state_dim, self.config.action_dim],
            });
        }
        let s0 = tape.constant(batch.states[0].clone());
        let q0 = self.encoder.init.forward(tape, bound, s0)?;
        let eps = tape.constant(noise.draw(n, l));
        let mut z = alloc::vec![reparam_sample(tape, q0, eps)?];
        let mut posterior = alloc::vec![q0];
        let mut hs = Vec::with_capacity(batch.steps);
        let mut h = tape.constant(Tensor::zeros(n, m));
        let mut c = tape.constant(Tensor::zeros(n, m));
        for t in 1..=batch.steps {
            let a = tape.constant(batch.actions[t - 1].clone());
            let s = tape.constant(batch.states[t].clone());
            let x = tape.concat(&[z[t - 1], a, s])?;
            (h, c) = self.encoder.cell.step(tape, bound, h, c, x)?;
            let q = self.encoder.post.forward(tape, bound, h)?;
            let eps = tape.constant(noise.draw(n, l));
            z.push(reparam_sample(tape, q, eps)?);
            posterior.push(q);
            hs.push(h);
        }
        Ok(Encoded {
            z,
            posterior,
            h: hs,
        })
    }

    /// Decoder recurrence of branch `b` conditioned on the given latents
    /// `z_0 .. z_{T-1}` (teacher forcing). Returns `h_1 .. h_T`.
    pub fn teacher_forced(
        &self,
        b: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        latents: &[Var],
    ) -> Result<Vec<Var>> {
        let (n, m) = (batch.rows, self.config.recurrent_dim);
        let branch = &self.branches[b];
        let mut h = tape.constant(Tensor::zeros(n, m));
        let mut c = tape.constant(Tensor::zeros(n, m));
        let mut hs = Vec::with_capacity(batch.steps);
        for t in 1..=batch.steps {
            let a = tape.constant(batch.actions[t - 1].clone());
            let x = tape.concat(&[latents[t - 1], a])?;
            (h, c) = branch.cell.step(tape, bound, h, c, x)?;
            hs.push(h);
        }
        Ok(hs)
    }

    /// Emission heads of branch `b` at latents `z`.
    pub fn emit(
        &self,
        b: usize,
        tape: &mut Tape,
        bound: &Bound,
        z: Var,
    ) -> Result<(DiagGaussian, DiagGaussian, Option<Var>)> {
        let branch = &self.branches[b];
        let state = branch.state.forward(tape, bound, z)?;
        let reward = branch.reward.forward(tape, bound, z)?;
        let term = match &branch.termination {
            Some(mlp) => Some(mlp.forward(tape, bound, z)?),
            None => None,
        };
        Ok((state, reward, term))
    }

    /// One free-running generative step of branch `b`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step(
        &self,
        b: usize,
        tape: &mut Tape,
        bound: &Bound,
        h_prev: Var,
        c_prev: Var,
        z_prev: Var,
        a_prev: Var,
        noise: &mut NoiseSource,
    ) -> Result<DecodedStep> {
        let branch = &self.branches[b];
        let x = tape.concat(&[z_prev, a_prev])?;
        let (h, c) = branch.cell.step(tape, bound, h_prev, c_prev, x)?;
        let h_tilde = branch.map.forward(tape, bound, h)?;
        let transition = branch.transition.forward(tape, bound, h_tilde)?;
        let (rows, l) = tape.value(transition.mean).dims();
        let eps = tape.constant(noise.draw(rows, l));
        let z = reparam_sample(tape, transition, eps)?;
        let (state, reward, termination) = self.emit(b, tape, bound, z)?;
        Ok(DecodedStep {
            h,
            c,
            h_tilde,
            transition,
            z,
            state,
            reward,
            termination,
        })
    }

    /// Posterior means `z_0 .. z_T` of one trajectory, in latent units.
    pub fn encode_means(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let batch = Batch::new(&[traj], &self.normalizer)?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let enc = self.encode(&mut tape, &bound, &batch, &mut NoiseSource::Zero)?;
        Ok(enc.z.iter().map(|&z| tape.value(z).data.clone()).collect())
    }
}
