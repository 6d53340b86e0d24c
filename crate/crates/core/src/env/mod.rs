//! Synthetic continuous-control environments with known dynamics.
//!
//! Three point-mass tasks stand in for physics-engine benchmarks: a 1-D mass
//! driven toward a goal, a 4-D planar variant with rotation and saturating
//! damping, and a 1-D mass that falls off a cliff (terminates) once it
//! strays too far.

mod data;
mod policy;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use data::{collect_dataset, oracle_return, run_episode, Dataset, OracleEstimate, Trajectory};
pub use policy::{
    behavior_policy, behavior_policy_with, divergent_policy, target_policies, target_policy,
    LinearGaussianPolicy, TARGET_GAINS,
};

use crate::error::{invalid, Error, Result};
use crate::nn::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    LineMass,
    Swirl2D,
    CliffMass,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::LineMass => "LineMass",
            EnvKind::Swirl2D => "Swirl2D",
            EnvKind::CliffMass => "CliffMass",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LineMass" => Ok(EnvKind::LineMass),
            "Swirl2D" => Ok(EnvKind::Swirl2D),
            "CliffMass" => Ok(EnvKind::CliffMass),
            other => Err(invalid(alloc::format!("unknown environment `{other}`"))),
        }
    }
}

/// Full description of one environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    /// Integration step.
    pub dt: f64,
    /// Std of the Gaussian noise added to each velocity update.
    pub process_noise: f64,
    pub init_mean: Vec<f64>,
    /// Std of the Gaussian perturbation of the initial state.
    pub init_noise: f64,
    /// Goal position (one entry per position coordinate).
    pub goal: Vec<f64>,
    pub control_cost: f64,
    /// Swirl2D: rotation angle applied to the velocity each step.
    pub swirl: f64,
    /// Swirl2D: strength of the `tanh` velocity damping.
    pub damping: f64,
    /// CliffMass: episode ends once `|pos| > cliff`.
    pub cliff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

impl EnvSpec {
    pub fn line_mass() -> Self {
        EnvSpec {
            kind: EnvKind::LineMass,
            state_dim: 2,
            action_dim: 1,
            horizon: 50,
            dt: 0.1,
            process_noise: 0.01,
            init_mean: vec![0.0, 0.0],
            init_noise: 0.05,
            goal: vec![1.0],
            control_cost: 0.01,
            swirl: 0.0,
            damping: 0.0,
            cliff: None,
        }
    }

    pub fn swirl_2d() -> Self {
        EnvSpec {
            kind: EnvKind::Swirl2D,
            state_dim: 4,
            action_dim: 2,
            horizon: 50,
            dt: 0.1,
            process_noise: 0.01,
            init_mean: vec![0.0; 4],
            init_noise: 0.05,
            goal: vec![1.0, 0.5],
            control_cost: 0.01,
            swirl: 0.05,
            damping: 0.2,
            cliff: None,
        }
    }

    pub fn cliff_mass() -> Self {
        EnvSpec {
            kind: EnvKind::CliffMass,
            cliff: Some(2.0),
            ..EnvSpec::line_mass()
        }
    }

    pub fn from_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::LineMass => Self::line_mass(),
            EnvKind::Swirl2D => Self::swirl_2d(),
            EnvKind::CliffMass => Self::cliff_mass(),
        }
    }

    pub fn id(&self) -> String {
        self.kind.to_string()
    }

    /// Copy with process and initial-state noise switched off.
    pub fn noiseless(mut self) -> Self {
        self.process_noise = 0.0;
        self.init_noise = 0.0;
        self
    }

    pub fn positions(&self) -> usize {
        self.state_dim / 2
    }

    pub fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        self.init_mean
            .iter()
            .map(|m| {
                let n = if self.init_noise > 0.0 {
                    rng.normal()
                } else {
                    0.0
                };
                m + self.init_noise * n
            })
            .collect()
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
    }

    /// Whether `s` violates the termination rule.
    pub fn violates(&self, s: &[f64]) -> bool {
        match self.cliff {
            Some(limit) => s[..self.positions()].iter().any(|p| p.abs() > limit),
            None => false,
        }
    }

    /// Advances one step. Actions outside `[-1, 1]` are clipped.
    pub fn step(&self, s: &[f64], a: &[f64], rng: &mut RngStream) -> Result<StepResult> {
        if s.len() != self.state_dim || a.len() != self.action_dim {
            return Err(Error::ShapeMismatch {
                op: "env_step",
                lhs: vec![s.len(), a.len()],
                rhs: vec![self.state_dim, self.action_dim],
            });
        }
        let a = self.clip_action(a);
        let k = self.positions();
        let (pos, vel) = s.split_at(k);
        let next_pos: Vec<f64> = pos.iter().zip(vel).map(|(p, v)| p + self.dt * v).collect();

        let mut drift: Vec<f64> = vel.to_vec();
        if self.kind == EnvKind::Swirl2D {
            let (c, sn) = (libm::cos(self.swirl), libm::sin(self.swirl));
            drift = vec![c * vel[0] - sn * vel[1], sn * vel[0] + c * vel[1]];
            for d in &mut drift {
                *d -= self.dt * self.damping * libm::tanh(*d);
            }
        }
        let next_vel: Vec<f64> = drift
            .iter()
            .zip(&a)
            .map(|(v, u)| {
                let n = if self.process_noise > 0.0 {
                    rng.normal()
                } else {
                    0.0
                };
                v + self.dt * u + self.process_noise * n
            })
            .collect();

        let dist: f64 = next_pos
            .iter()
            .zip(&self.goal)
            .map(|(p, g)| (p - g) * (p - g))
            .sum();
        let effort: f64 = a.iter().map(|u| u * u).sum();
        let reward = -dist - self.control_cost * effort;

        let mut next = next_pos;
        next.extend(next_vel);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "env_step" });
        }
        let done = self.violates(&next);
        Ok(StepResult { next, reward, done })
    }
}
