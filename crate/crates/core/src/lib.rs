//! Small-value (lower-tail) probabilities for the martingale limit of
//! supercritical Galton-Watson processes and for intersection local times of
//! Brownian motion.
//!
//! The crate is organised bottom-up:
//!
//! - [`stats`]: seeded random streams, Wilson intervals, exponent regressions
//!   and the two-sample Kolmogorov-Smirnov statistic.
//! - [`offspring`]: offspring laws, branching parameters, generating
//!   functions, extinction probability and pruning of finite subtrees.
//! - [`galton_watson`]: generation-size simulation, martingale-limit sampling
//!   (plain and conditioned) and a grid solver for the law of `W`.
//! - [`gw_tails`]: explicit bound formulas for `P{W < ε}` and end-to-end
//!   exponent experiments.
//! - [`brownian_paths`]: dyadic embedded random walks, discrete local times,
//!   h-transformed segments and gambler's-ruin utilities.
//! - [`intersection_tails`]: mutual and self-intersection local times, their
//!   tail experiments and the strategy-based bounds.

pub mod brownian_paths;
pub mod error;
pub mod galton_watson;
pub mod gw_tails;
pub mod intersection_tails;
pub mod offspring;
pub mod stats;

pub use error::{Error, Result};
