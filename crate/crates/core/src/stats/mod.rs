//! Statistical primitives shared by the experiments.

mod estimate;
mod ks;
mod parallel;
mod regression;
mod rng;

pub use estimate::{wilson_interval, BernoulliEstimate, DEFAULT_CONFIDENCE, Z_95};
pub use ks::{ks_distance_to_cdf, ks_statistic, ks_two_sample_threshold};
pub use parallel::{par_chunks, par_items};
pub use regression::{
    fit_power_law, fit_power_law_weighted, fit_stretched_exponent, fit_stretched_exponent_weighted,
    RegressionFit,
};
pub use rng::{RngStream, StreamRng};
