//! Experiment configuration: a JSON file mirroring [`ExperimentConfig`],
//! with command-line flags layered on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vlbm_core::ar::ArConfig;
use vlbm_core::autodiff::AdamConfig;
use vlbm_core::env::{target_policy, EnvKind, EnvSpec, LinearGaussianPolicy, TARGET_GAINS};
use vlbm_core::model::{
    DecoderStart, ModelConfig, RolloutConfig, TerminationMode, TrainConfig, Variant,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Offline dataset; generated from the behavioral policy when absent.
    pub data: Option<PathBuf>,
    /// Trajectories generated when `data` is absent.
    pub n_traj: usize,
    pub data_seed: u64,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Position gains of the target policies.
    pub policies: Vec<f64>,

    pub latent_dim: usize,
    pub recurrent_dim: usize,
    pub dense_dim: usize,
    pub mlp_hidden: Vec<usize>,
    /// Decoder branches for VLBM, members of the classic ensemble.
    pub branches: usize,
    pub ar_members: usize,
    /// Weight of the per-member likelihoods in the AR ensemble objective.
    pub ar_member_weight: f64,
    /// `C` (single decoder) or `C_1` (branched).
    pub rsa_weight: f64,
    /// `C_2`.
    pub elbo_weight: f64,
    pub gate_eps: f64,
    pub termination: bool,
    pub decoder_start: DecoderStart,

    pub lr: f64,
    pub lr_decay: f64,
    pub l2_decay: f64,
    pub max_iter: usize,
    pub batch_size: usize,

    pub gamma: f64,
    pub eval_episodes: usize,
    /// Rollout horizon; the environment's when absent.
    pub horizon: Option<usize>,
    pub termination_mode: TerminationMode,
    pub oracle_episodes: usize,
    pub oracle_seed: u64,
    /// Oracle cache file; `oracle_cache.json` in the output directory when
    /// absent.
    pub oracle_cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        let rollout = RolloutConfig::default();
        ExperimentConfig {
            env: "LineMass".into(),
            data: None,
            n_traj: 200,
            data_seed: 0,
            variants: vec![Variant::Vlbm],
            seeds: vec![0, 1, 2],
            policies: TARGET_GAINS.to_vec(),
            latent_dim: 16,
            recurrent_dim: 64,
            dense_dim: 64,
            mlp_hidden: vec![128, 64],
            branches: 10,
            ar_members: 10,
            ar_member_weight: 1.0,
            rsa_weight: 0.1,
            elbo_weight: 0.1,
            gate_eps: 1e-8,
            termination: false,
            decoder_start: DecoderStart::Encoder,
            lr: train.lr,
            lr_decay: train.lr_decay,
            l2_decay: adam.l2_decay,
            max_iter: train.max_iter,
            batch_size: train.batch_size,
            gamma: rollout.gamma,
            eval_episodes: rollout.episodes,
            horizon: None,
            termination_mode: rollout.termination,
            oracle_episodes: 1000,
            oracle_seed: 12345,
            oracle_cache: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let kind: EnvKind = self
            .env
            .parse()
            .map_err(|_| Error::Usage(format!("unknown environment `{}`", self.env)))?;
        Ok(EnvSpec::from_kind(kind))
    }

    pub fn target_policies(&self, env: &EnvSpec) -> Vec<LinearGaussianPolicy> {
        self.policies
            .iter()
            .enumerate()
            .map(|(i, &kp)| target_policy(env, i, kp))
            .collect()
    }

    pub fn model_config(
        &self,
        variant: Variant,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<ModelConfig> {
        let kind = variant
            .model_kind()
            .ok_or_else(|| Error::Usage(format!("{variant} has no latent model")))?;
        let mut c = ModelConfig::new(kind, state_dim, action_dim);
        c.latent_dim = self.latent_dim;
        c.recurrent_dim = self.recurrent_dim;
        c.dense_dim = self.dense_dim;
        c.mlp_hidden = self.mlp_hidden.clone();
        c.branches = if variant == Variant::Vlbm {
            self.branches
        } else {
            1
        };
        c.rsa_weight = self.rsa_weight;
        c.elbo_weight = self.elbo_weight;
        c.gate_eps = self.gate_eps;
        c.termination = self.termination;
        c.decoder_start = self.decoder_start;
        c.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn ar_config(&self, state_dim: usize, action_dim: usize) -> Result<ArConfig> {
        let mut c = ArConfig::new(state_dim, action_dim);
        c.members = self.ar_members;
        c.mlp_hidden = self.mlp_hidden.clone();
        c.gate_eps = self.gate_eps;
        c.member_weight = self.ar_member_weight;
        c.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_iter: self.max_iter,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            adam: AdamConfig {
                l2_decay: self.l2_decay,
                ..AdamConfig::default()
            },
        }
    }

    pub fn rollout_config(&self, env: &EnvSpec) -> RolloutConfig {
        RolloutConfig {
            horizon: self.horizon.unwrap_or(env.horizon),
            gamma: self.gamma,
            episodes: self.eval_episodes,
            termination: self.termination_mode,
        }
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.env_spec()?;
        let usage = |m: &str| Err(Error::Usage(m.into()));
        if self.variants.is_empty() {
            return usage("no variants selected");
        }
        if self.seeds.is_empty() {
            return usage("no seeds selected");
        }
        if self.policies.is_empty() {
            return usage("no target policies selected");
        }
        if self.batch_size == 0 || self.n_traj == 0 || self.oracle_episodes == 0 {
            return usage("batch_size, n_traj and oracle_episodes must be positive");
        }
        if !(self.lr > 0.0) {
            return usage("lr must be positive");
        }
        self.rollout_config(&self.env_spec()?)
            .validate()
            .map_err(|e| Error::Usage(e.to_string()))?;
        for &v in &self.variants {
            match v {
                Variant::ArEnsemble => {
                    self.ar_config(1, 1)?;
                }
                Variant::VlmRsaEnsemble if self.branches == 0 => {
                    return usage("the classic ensemble needs branches >= 1")
                }
                _ => {
                    self.model_config(v, 1, 1)?;
                }
            }
        }
        Ok(())
    }
}

/// Parses a variant list: comma-separated names, or `all`.
pub fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("unknown variant `{v}`")))
        })
        .collect()
}
