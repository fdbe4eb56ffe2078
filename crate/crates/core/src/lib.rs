//! Exact and Monte Carlo machinery for critical and noncritical
//! Galton-Watson trees conditioned to have k particles in generation n,
//! the limit tree as n → ∞, and span/gap statistics of branching random
//! walks indexed by those trees.
//!
//! Layout: [`offspring`] holds the reproduction laws and their generating
//! function calculus, [`transition`] the conditioned transition table and
//! ratio limits, [`sampler`] the exact conditioned samplers, [`spatial`]
//! displacement labelling and span geometry, [`constants`] the limit tail
//! constants, [`oracle`] small-case exact distributions for validation,
//! and [`experiments`] the Monte Carlo tail studies.

pub mod constants;
pub mod error;
pub mod experiments;
pub mod offspring;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod spatial;
pub mod stats;
pub mod transition;
pub mod tree;

pub use error::{Error, Result};
