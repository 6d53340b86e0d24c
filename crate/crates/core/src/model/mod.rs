//! The latent model: encoder, decoder branches, training objectives,
//! training loop and simulated rollouts.

mod batch;
mod config;
mod latent;
mod objective;
mod rollout;
mod train;

pub use batch::{Batch, NoiseSource, Normalizer};
pub use config::{
    DecoderStart, ModelConfig, ModelKind, RolloutConfig, TerminationMode, TrainConfig, Variant,
    LR_GRID, RSA_WEIGHT_GRID,
};
pub use latent::{
    branch_weights, gate_weights, mix_bernoulli, mix_gaussian, Branch, DecodedStep, Encoded,
    Encoder, LatentModel, GATE_INIT,
};
pub use objective::{alignment_loss, rsa, Alignment, ObjectiveTerms};
pub use rollout::{
    export_latents, rollout, rollout_ensemble, rollout_members, LatentRow, LatentTable, Member,
    RolloutResult,
};
pub use train::{sample_minibatch, train, TrainLog};
