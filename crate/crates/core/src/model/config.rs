use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{invalid, Error, Result};

/// Grid searched for `C` (and `C_1 = C_2`).
pub const RSA_WEIGHT_GRID: [f64; 8] = [5.0, 1.0, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0001];
/// Grid searched for the initial learning rate.
pub const LR_GRID: [f64; 7] = [0.003, 0.001, 0.0007, 0.0005, 0.0003, 0.0001, 0.00005];

/// Which training objective a single latent model optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Plain ELBO.
    Vlm,
    /// ELBO minus `C` times the pairwise recurrent-state alignment loss.
    VlmRsa,
    /// Same, with plain mean squared error in place of the pairwise loss.
    VlmRsaMse,
    /// Branched decoder with learned mixture weights.
    Vlbm,
}

/// Model variants compared by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "VLM")]
    Vlm,
    #[serde(rename = "VLM+RSA")]
    VlmRsa,
    #[serde(rename = "VLM+RSA(MSE)")]
    VlmRsaMse,
    #[serde(rename = "VLM+RSA-Ensemble")]
    VlmRsaEnsemble,
    #[serde(rename = "VLBM")]
    Vlbm,
    #[serde(rename = "AR-Ensemble")]
    ArEnsemble,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Vlm,
        Variant::VlmRsa,
        Variant::VlmRsaMse,
        Variant::VlmRsaEnsemble,
        Variant::Vlbm,
        Variant::ArEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vlm => "VLM",
            Variant::VlmRsa => "VLM+RSA",
            Variant::VlmRsaMse => "VLM+RSA(MSE)",
            Variant::VlmRsaEnsemble => "VLM+RSA-Ensemble",
            Variant::Vlbm => "VLBM",
            Variant::ArEnsemble => "AR-Ensemble",
        }
    }

    /// Kind of the latent model(s) trained for this variant; `None` for the
    /// autoregressive baseline.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Variant::Vlm => Some(ModelKind::Vlm),
            Variant::VlmRsa | Variant::VlmRsaEnsemble => Some(ModelKind::VlmRsa),
            Variant::VlmRsaMse => Some(ModelKind::VlmRsaMse),
            Variant::Vlbm => Some(ModelKind::Vlbm),
            Variant::ArEnsemble => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(alloc::format!("unknown variant `{s}`")))
    }
}

/// Where the decoder recurrences take their first latent input from during
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderStart {
    /// The encoder's sample `z_0` (teacher forcing from the first step).
    Encoder,
    /// An independent draw from the latent prior per branch.
    Prior,
}

/// Architecture and objective of one latent model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Latent width `l`.
    pub latent_dim: usize,
    /// LSTM width `M`, shared by encoder, decoder and the mapping `g`.
    pub recurrent_dim: usize,
    /// Width of the dense layer that follows each LSTM.
    pub dense_dim: usize,
    /// Hidden widths of the non-recurrent MLPs.
    pub mlp_hidden: Vec<usize>,
    /// Number of decoder branches `B`.
    pub branches: usize,
    /// `C` for the single-decoder objectives, `C_1` for the branched one.
    pub rsa_weight: f64,
    /// `C_2`, weight of the per-branch ELBOs in the branched objective.
    pub elbo_weight: f64,
    /// Constant `eps` in the mixture-weight map.
    pub gate_eps: f64,
    /// Model Bernoulli episode termination.
    pub termination: bool,
    pub decoder_start: DecoderStart,
}

impl ModelConfig {
    /// Full-size defaults: `l = 16`, `M = 64`, MLPs `128-64`, `B = 10`.
    pub fn new(kind: ModelKind, state_dim: usize, action_dim: usize) -> Self {
        ModelConfig {
            kind,
            state_dim,
            action_dim,
            latent_dim: 16,
            recurrent_dim: 64,
            dense_dim: 64,
            mlp_hidden: vec![128, 64],
            branches: if kind == ModelKind::Vlbm { 10 } else { 1 },
            rsa_weight: 0.1,
            elbo_weight: 0.1,
            gate_eps: 1e-8,
            termination: false,
            decoder_start: DecoderStart::Encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return Err(invalid("at least one decoder branch is required"));
        }
        if self.kind != ModelKind::Vlbm && self.branches != 1 {
            return Err(invalid("only the branched model has more than one decoder"));
        }
        if self.state_dim == 0 || self.action_dim == 0 || self.latent_dim == 0 {
            return Err(invalid("state, action and latent widths must be positive"));
        }
        if self.recurrent_dim < 2 && self.kind != ModelKind::Vlm {
            return Err(invalid("alignment needs a recurrent width of at least 2"));
        }
        if !(self.rsa_weight > 0.0) || !(self.elbo_weight > 0.0) {
            return Err(invalid("objective weights must be positive"));
        }
        if !(self.gate_eps > 0.0) {
            return Err(invalid("gate epsilon must be positive"));
        }
        Ok(())
    }
}

/// Optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per iteration.
    pub lr_decay: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iter: 1000,
            batch_size: 64,
            lr: 0.001,
            lr_decay: 0.997,
            adam: AdamConfig::default(),
        }
    }
}

/// How a rollout decides that a simulated episode has terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationMode {
    /// Draw `d_t ~ Bernoulli(mean)`.
    Sample,
    /// Stop once the mean reaches 0.5.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub episodes: usize,
    pub termination: TerminationMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            horizon: 50,
            gamma: 0.995,
            episodes: 50,
            termination: TerminationMode::Sample,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma must lie in [0, 1)"));
        }
        if self.episodes == 0 {
            return Err(invalid("at least one episode is required"));
        }
        Ok(())
    }
}
