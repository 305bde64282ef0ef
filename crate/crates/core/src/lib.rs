//! Score-based generative modelling of asset returns with diagonal
//! (per-component) diffusion processes, a one-hidden-layer score network and
//! a deterministic, quadrature-based denoising score-matching objective.

pub mod data;
pub mod dsde;
pub mod error;
pub mod objective;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod score_net;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
