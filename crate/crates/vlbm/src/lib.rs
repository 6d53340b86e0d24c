//! Files, experiments and the command line around [`vlbm_core`].
//!
//! - [`dataset`]: the `.traj.jsonl` offline dataset format.
//! - [`config`]: the JSON experiment configuration.
//! - [`trained`]: training any variant, rolling it out, checkpoints.
//! - [`harness`]: the off-policy evaluation study and its report files.

pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod trained;

pub use error::{Error, Result};
pub use vlbm_core;
