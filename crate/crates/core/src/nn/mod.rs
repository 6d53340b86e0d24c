//! Neural building blocks and distribution heads shared by the encoder,
//! the decoder branches and the autoregressive baseline.

mod dist;
mod lstm;
mod mlp;
mod params;
mod rng;

pub use dist::{
    bernoulli_log_prob, gaussian_kl, gaussian_log_prob, reparam_sample, sample_with,
    standard_normal, DiagGaussian, GaussianHead, BERNOULLI_CLIP, VAR_FLOOR,
};
pub use lstm::Lstm;
pub use mlp::{uniform_fan_in, Head, Mlp};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::RngStream;
