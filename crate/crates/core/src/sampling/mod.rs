//! Random and quasi-random sample generation.

mod rng;
mod sobol;

pub use rng::{normal_draws, SeededRng};
pub use sobol::{sobol_gaussian, SobolSampler, DIRECTION_NUMBERS, MAX_DIMENSION};

pub use crate::special::normal_inverse_cdf;
