use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EnvSpec, LinearGaussianPolicy};
use crate::error::{invalid, Result};
use crate::nn::RngStream;

/// One offline episode: `T + 1` states, `T` actions and `T` rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// The episode ended because the last state violated the environment's
    /// termination rule.
    pub terminated: bool,
}

impl Trajectory {
    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        let mut disc = 1.0;
        for r in &self.rewards {
            g += disc * r;
            disc *= gamma;
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.rewards.len() + 1 || self.actions.len() != self.rewards.len() {
            return Err(invalid(alloc::format!(
                "trajectory has {} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        let sd = self.state_dim();
        if self.states.iter().any(|s| s.len() != sd) {
            return Err(invalid("ragged state vectors"));
        }
        let ad = self.action_dim();
        if self.actions.iter().any(|a| a.len() != ad) {
            return Err(invalid("ragged action vectors"));
        }
        Ok(())
    }
}

/// Offline trajectories from a single behavioral policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub env: String,
    pub policy: String,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::state_dim)
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::action_dim)
    }

    pub fn mean_length(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories
            .iter()
            .map(|t| t.len() as f64)
            .sum::<f64>()
            / self.trajectories.len() as f64
    }

    pub fn mean_return(&self, gamma: f64) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories
            .iter()
            .map(|t| t.discounted_return(gamma))
            .sum::<f64>()
            / self.trajectories.len() as f64
    }
}

/// Runs `policy` on the true environment until the horizon or termination.
pub fn run_episode(
    env: &EnvSpec,
    policy: &LinearGaussianPolicy,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let mut s = env.reset(rng);
    let mut traj = Trajectory {
        states: alloc::vec![s.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: false,
    };
    for _ in 0..env.horizon {
        let a = policy.act(&s, rng);
        let step = env.step(&s, &a, rng)?;
        traj.actions.push(a);
        traj.rewards.push(step.reward);
        traj.states.push(step.next.clone());
        s = step.next;
        if step.done {
            traj.terminated = true;
            break;
        }
    }
    Ok(traj)
}

/// `n_traj` independent episodes; episode `i` draws from stream `i` of the
/// seed.
pub fn collect_dataset(
    env: &EnvSpec,
    policy: &LinearGaussianPolicy,
    n_traj: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    let root = RngStream::new(seed);
    let trajectories = (0..n_traj)
        .map(|i| run_episode(env, policy, &mut root.fork(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        env: env.id(),
        policy: policy.name.clone(),
        seed,
        trajectories,
    })
}

/// Monte-Carlo ground truth for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub mean_length: f64,
    pub episodes: usize,
}

/// Mean discounted return `sum_t gamma^t r_t` of `policy` on the true
/// environment over `episodes` episodes.
pub fn oracle_return(
    env: &EnvSpec,
    policy: &LinearGaussianPolicy,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<OracleEstimate> {
    if episodes == 0 {
        return Err(invalid("episodes must be at least 1"));
    }
    let root = RngStream::new(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut total_len = 0usize;
    for e in 0..episodes {
        let traj = run_episode(env, policy, &mut root.fork(e as u64))?;
        total_len += traj.len();
        returns.push(traj.discounted_return(gamma));
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std_err = if episodes > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        libm::sqrt(var / n)
    } else {
        0.0
    };
    Ok(OracleEstimate {
        mean,
        std_err,
        mean_length: total_len as f64 / n,
        episodes,
    })
}
