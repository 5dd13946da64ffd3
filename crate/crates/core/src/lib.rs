//! Action-space dynamics decomposition for model-based control.
//!
//! The pipeline discovers groups of action dimensions that drive separate
//! parts of the environment dynamics ([`sd2`]), builds world models with one
//! latent kernel per group ([`d2p`]), and measures the effect on prediction
//! error ([`bench`]) and on model-predictive control ([`control`]). The
//! synthetic environments in [`envs`] have known ground-truth groups.

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, PartitionFault, Result};
pub mod envs;
pub mod sd2;
pub mod d2p;
pub mod bench;
pub mod control;
