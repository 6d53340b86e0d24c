//! Variational latent branching model (VLBM) for model-based off-policy
//! evaluation.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! a small reverse-mode differentiation tape, the neural blocks built on
//! it, the latent model with its training objectives and rollouts, a suite
//! of synthetic control environments with Monte-Carlo ground truth, and the
//! ranking metrics used to score estimates. File formats, the experiment
//! driver and the command line live in the `vlbm` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ar;
pub mod autodiff;
pub mod env;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
