use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Batch, LatentModel, NoiseSource, TrainConfig};
use crate::autodiff::{adam_step, lr_schedule, AdamState, Tape};
use crate::env::{Dataset, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::nn::RngStream;

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iter: usize,
    pub objective: f64,
    pub lr: f64,
}

/// `k` distinct indices out of `0..n` (partial Fisher-Yates).
pub fn sample_minibatch(n: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Maximizes the model's objective with Adam on minibatches drawn without
/// replacement. Returns one log row per iteration.
///
/// Minibatches come from `rng` itself; the reparameterization noise of
/// iteration `i` comes from `rng.fork(i)`.
pub fn train(
    model: &mut LatentModel,
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
        let batch = Batch::new(&trajs, &model.normalizer)?;
        let mut noise = NoiseSource::Rng(rng.fork(iter as u64));
        let lr = lr_schedule(cfg.lr, cfg.lr_decay, iter);

        let mut step = || -> Result<(f64, Vec<crate::autodiff::Tensor>)> {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let terms = model.objective(&mut tape, &bound, &batch, &mut noise)?;
            let loss = tape.neg(terms.total)?;
            let grads = tape.backward(loss)?;
            Ok((tape.item(terms.total), bound.grads(&grads)))
        };
        let (objective, grads) = match step() {
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
