use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvSpec};
use crate::nn::RngStream;

/// Position gains of the eleven target policies, from sluggish
/// (over-damped) through well-tuned to oscillatory (under-damped).
pub const TARGET_GAINS: [f64; 11] = [0.1, 0.15, 0.2, 0.3, 0.4, 0.55, 0.75, 1.0, 1.5, 2.2, 3.2];
const VELOCITY_GAIN: f64 = 1.0;
const TARGET_NOISE: f64 = 0.1;
const BEHAVIOR_GAIN: f64 = 1.0;
const BEHAVIOR_NOISE: f64 = 0.3;

/// `a = clip(K s + bias + N(0, noise^2))`, with `K` stored row-major as
/// `action_dim x state_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPolicy {
    pub name: String,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise: f64,
}

impl LinearGaussianPolicy {
    pub fn action_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn state_dim(&self) -> usize {
        self.gain.len() / self.bias.len().max(1)
    }

    /// PD controller steering every position coordinate toward `aim`.
    pub fn pd(
        env: &EnvSpec,
        name: impl Into<String>,
        kp: f64,
        kd: f64,
        aim: &[f64],
        noise: f64,
    ) -> Self {
        let (n, k) = (env.state_dim, env.positions());
        let mut gain = vec![0.0; env.action_dim * n];
        let mut bias = vec![0.0; env.action_dim];
        for i in 0..env.action_dim {
            gain[i * n + i] = -kp;
            gain[i * n + k + i] = -kd;
            bias[i] = kp * aim[i];
        }
        LinearGaussianPolicy {
            name: name.into(),
            gain,
            bias,
            noise,
        }
    }

    /// Noise-free mean action before clipping.
    pub fn mean_action(&self, s: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        self.bias
            .iter()
            .enumerate()
            .map(|(i, b)| b + (0..n).map(|j| self.gain[i * n + j] * s[j]).sum::<f64>())
            .collect()
    }

    pub fn act(&self, s: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self.mean_action(s)
            .into_iter()
            .map(|m| {
                let n = if self.noise > 0.0 { rng.normal() } else { 0.0 };
                (m + self.noise * n).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

/// Target controller number `index` of a sweep, with position gain `kp`.
pub fn target_policy(env: &EnvSpec, index: usize, kp: f64) -> LinearGaussianPolicy {
    LinearGaussianPolicy::pd(
        env,
        format!("target-{index:02}-kp{kp}"),
        kp,
        VELOCITY_GAIN,
        &env.goal,
        TARGET_NOISE,
    )
}

/// The gain sweep evaluated by off-policy estimators.
pub fn target_policies(env: &EnvSpec) -> Vec<LinearGaussianPolicy> {
    TARGET_GAINS
        .iter()
        .enumerate()
        .map(|(i, &kp)| target_policy(env, i, kp))
        .collect()
}

/// Medium-gain noisy controller that generates the offline data. On
/// CliffMass it aims close enough to the cliff that overshoot terminates
/// roughly half of the episodes.
pub fn behavior_policy(env: &EnvSpec) -> LinearGaussianPolicy {
    behavior_policy_with(env, BEHAVIOR_GAIN, BEHAVIOR_NOISE)
}

/// Behavioral controller with a custom position gain and exploration noise.
pub fn behavior_policy_with(env: &EnvSpec, kp: f64, noise: f64) -> LinearGaussianPolicy {
    let aim: Vec<f64> = match (env.kind, env.cliff) {
        (EnvKind::CliffMass, Some(c)) => vec![c - 0.3; env.positions()],
        _ => env.goal.clone(),
    };
    LinearGaussianPolicy::pd(
        env,
        format!("behavior-kp{kp}-noise{noise}"),
        kp,
        VELOCITY_GAIN,
        &aim,
        noise,
    )
}

/// Constant outward push that eventually leaves any bounded region.
pub fn divergent_policy(env: &EnvSpec, push: f64, noise: f64) -> LinearGaussianPolicy {
    LinearGaussianPolicy {
        name: format!("divergent-push{push}"),
        gain: vec![0.0; env.action_dim * env.state_dim],
        bias: vec![push; env.action_dim],
        noise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_policy() {
        let env = EnvSpec::line_mass();
        let p = LinearGaussianPolicy {
            name: "c".into(),
            gain: vec![0.0, 0.0],
            bias: vec![0.3],
            noise: 0.0,
        };
        assert_eq!(p.act(&[5.0, -2.0], &mut RngStream::new(0)), vec![0.3]);
        let hard = LinearGaussianPolicy {
            bias: vec![1.7],
            ..p
        };
        assert_eq!(hard.act(&[0.0, 0.0], &mut RngStream::new(0)), vec![1.0]);
        assert_eq!(env.action_dim, hard.action_dim());
    }

    #[test]
    fn same_seed_same_actions() {
        let env = EnvSpec::line_mass();
        let p = behavior_policy(&env);
        let run = |seed| {
            let mut rng = RngStream::new(seed);
            (0..10)
                .map(|i| p.act(&[i as f64 * 0.1, 0.0], &mut rng)[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn pd_layout() {
        let env = EnvSpec::swirl_2d();
        let p = LinearGaussianPolicy::pd(&env, "pd", 2.0, 1.0, &[1.0, 0.5], 0.0);
        assert_eq!(p.state_dim(), 4);
        assert_eq!(p.mean_action(&[1.0, 0.5, 0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(p.mean_action(&[0.0, 0.0, 0.0, 0.0]), vec![2.0, 1.0]);
        assert_eq!(target_policies(&env).len(), 11);
    }
}
