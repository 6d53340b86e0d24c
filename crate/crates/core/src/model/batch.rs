use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::env::{Dataset, Trajectory};
use crate::error::{invalid, Result};
use crate::nn::RngStream;

/// Per-dimension affine standardization of states and rewards, fitted on
/// the offline data. Models work in standardized units; rollouts map back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    (mean, if std > 1e-6 { std } else { 1.0 })
}

impl Normalizer {
    pub fn identity(state_dim: usize) -> Self {
        Normalizer {
            state_mean: alloc::vec![0.0; state_dim],
            state_std: alloc::vec![1.0; state_dim],
            reward_mean: 0.0,
            reward_std: 1.0,
        }
    }

    pub fn fit(data: &Dataset) -> Self {
        let sd = data.state_dim();
        let states = || data.trajectories.iter().flat_map(|t| t.states.iter());
        let (state_mean, state_std) = (0..sd)
            .map(|j| mean_std(states().map(move |s| s[j])))
            .unzip();
        let (reward_mean, reward_std) = mean_std(
            data.trajectories
                .iter()
                .flat_map(|t| t.rewards.iter().copied()),
        );
        Normalizer {
            state_mean,
            state_std,
            reward_mean,
            reward_std,
        }
    }

    pub fn state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| (v - self.state_mean[j]) / self.state_std[j])
            .collect()
    }

    pub fn unstate(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| v * self.state_std[j] + self.state_mean[j])
            .collect()
    }

    pub fn reward(&self, r: f64) -> f64 {
        (r - self.reward_mean) / self.reward_std
    }

    pub fn unreward(&self, r: f64) -> f64 {
        r * self.reward_std + self.reward_mean
    }
}

/// Where reparameterization noise comes from.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    /// All noise is zero: samples equal their means.
    Zero,
    Rng(RngStream),
}

impl NoiseSource {
    pub fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            NoiseSource::Zero => Tensor::zeros(rows, cols),
            NoiseSource::Rng(rng) => rng.normal_tensor(rows, cols),
        }
    }
}

/// Time-major, padded minibatch of standardized trajectories.
///
/// Row `i` of every per-step tensor belongs to trajectory `i`. Steps past a
/// trajectory's end repeat its last state and carry zero mask.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: usize,
    /// Longest trajectory length `T` in the batch.
    pub steps: usize,
    pub lengths: Vec<usize>,
    /// `T + 1` tensors of shape `rows x state_dim`.
    pub states: Vec<Tensor>,
    /// `T` tensors of shape `rows x action_dim`.
    pub actions: Vec<Tensor>,
    /// `T` tensors of shape `rows x 1`; entry `t` holds `r_t`.
    pub rewards: Vec<Tensor>,
    /// `T + 1` termination labels `d_t`.
    pub done: Vec<Tensor>,
    /// `T + 1` validity masks (1 while `t <= length`).
    pub mask: Vec<Tensor>,
}

impl Batch {
    pub fn new(trajs: &[&Trajectory], norm: &Normalizer) -> Result<Self> {
        if trajs.is_empty() {
            return Err(invalid("empty batch"));
        }
        for t in trajs {
            t.validate()?;
        }
        let rows = trajs.len();
        let steps = trajs.iter().map(|t| t.len()).max().unwrap_or(0);
        let sd = trajs[0].state_dim();
        let ad = trajs.iter().map(|t| t.action_dim()).max().unwrap_or(0);
        if trajs
            .iter()
            .any(|t| t.state_dim() != sd || (!t.is_empty() && t.action_dim() != ad))
        {
            return Err(invalid("trajectories in a batch must share widths"));
        }
        let lengths: Vec<usize> = trajs.iter().map(|t| t.len()).collect();

        let mut states = Vec::with_capacity(steps + 1);
        let mut done = Vec::with_capacity(steps + 1);
        let mut mask = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            let mut s = Vec::with_capacity(rows * sd);
            let mut d = Vec::with_capacity(rows);
            let mut m = Vec::with_capacity(rows);
            for tr in trajs {
                let idx = t.min(tr.len());
                s.extend(norm.state(&tr.states[idx]));
                d.push(if tr.terminated && t == tr.len() {
                    1.0
                } else {
                    0.0
                });
                m.push(if t <= tr.len() { 1.0 } else { 0.0 });
            }
            states.push(Tensor::new(alloc::vec![rows, sd], s)?);
            done.push(Tensor::column(&d));
            mask.push(Tensor::column(&m));
        }
        let mut actions = Vec::with_capacity(steps);
        let mut rewards = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut a = Vec::with_capacity(rows * ad);
            let mut r = Vec::with_capacity(rows);
            for tr in trajs {
                if t < tr.len() {
                    a.extend_from_slice(&tr.actions[t]);
                    r.push(norm.reward(tr.rewards[t]));
                } else {
                    a.extend(core::iter::repeat_n(0.0, ad));
                    r.push(0.0);
                }
            }
            actions.push(Tensor::new(alloc::vec![rows, ad], a)?);
            rewards.push(Tensor::column(&r));
        }
        Ok(Batch {
            rows,
            steps,
            lengths,
            states,
            actions,
            rewards,
            done,
            mask,
        })
    }

    pub fn from_dataset(data: &Dataset, norm: &Normalizer) -> Result<Self> {
        let refs: Vec<&Trajectory> = data.trajectories.iter().collect();
        Batch::new(&refs, norm)
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].cols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Tensor::cols)
    }

    /// Vertically stacks `parts` (time-major).
    pub fn stack(parts: &[Tensor]) -> Tensor {
        let cols = parts.first().map_or(0, Tensor::cols);
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Tensor {
            shape: alloc::vec![data.len() / cols.max(1), cols],
            data,
        }
    }

    /// Per-step alignment weights `mask / length` for `t = 1..=T`, stacked.
    pub fn alignment_weights(&self) -> Tensor {
        let mut w = Vec::with_capacity(self.steps * self.rows);
        for t in 1..=self.steps {
            for (i, &len) in self.lengths.iter().enumerate() {
                let m = self.mask[t].data[i];
                w.push(if len > 0 { m / len as f64 } else { 0.0 });
            }
        }
        Tensor::column(&w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{behavior_policy, collect_dataset, EnvSpec};

    #[test]
    fn padding_and_masks() {
        let env = EnvSpec::cliff_mass();
        let data = collect_dataset(&env, &behavior_policy(&env), 8, 0).unwrap();
        let norm = Normalizer::fit(&data);
        let b = Batch::from_dataset(&data, &norm).unwrap();
        assert_eq!(b.states.len(), b.steps + 1);
        assert_eq!(b.actions.len(), b.steps);
        for (i, tr) in data.trajectories.iter().enumerate() {
            let valid: f64 = b.mask.iter().map(|m| m.data[i]).sum();
            assert_eq!(valid as usize, tr.len() + 1);
            let d: f64 = b.done.iter().map(|m| m.data[i]).sum();
            assert_eq!(d, if tr.terminated { 1.0 } else { 0.0 });
        }
        let w = b.alignment_weights();
        for i in 0..b.rows {
            let total: f64 = (0..b.steps).map(|t| w.data[t * b.rows + i]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_round_trip() {
        let env = EnvSpec::line_mass();
        let data = collect_dataset(&env, &behavior_policy(&env), 4, 1).unwrap();
        let n = Normalizer::fit(&data);
        let s = [0.3, -0.7];
        let back = n.unstate(&n.state(&s));
        assert!((back[0] - s[0]).abs() < 1e-12 && (back[1] - s[1]).abs() < 1e-12);
        assert!((n.unreward(n.reward(-0.4)) + 0.4).abs() < 1e-12);
    }
}
