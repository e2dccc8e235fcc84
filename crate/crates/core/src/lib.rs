//! Likelihood-free inference for simulator models with categorical output.
//!
//! The simulator-based Jensen-Shannon divergence between observed and
//! simulated category proportions is turned into a χ²-calibrated test
//! statistic. Test inversion over a parameter grid (or a Gaussian-process
//! surrogate of the expected divergence) yields confidence sets.
//!
//! Module map:
//!
//! - [`categorical`]: simplex types, multinomial and Gumbel-max sampling,
//!   multinomial central moments.
//! - [`divergence`]: entropy, KL, JSD, TV, χ² divergence, Pearson/Neyman
//!   statistics and analytic bounds.
//! - [`asymptotics`]: exact (Bernstein) and asymptotic moments of the
//!   simulator-based JSD statistic.
//! - [`simulators`]: the simulator contract and the bundled models.
//! - [`inference`]: Monte Carlo expected JSD, effective sample size, test
//!   statistic, χ² functions, tests and confidence sets.
//! - [`surrogate`]: Gaussian-process surrogate with LCB acquisition.
//! - [`harness`]: coverage experiments and report formats used by the CLI.

pub mod asymptotics;
pub mod categorical;
pub mod divergence;
mod error;
pub mod harness;
pub mod inference;
pub mod simulators;
pub mod special;
pub mod surrogate;

pub use categorical::{CategoricalPmf, EmpiricalCounts, RngStream};
pub use divergence::MixingWeight;
pub use error::{Error, Result};
pub use simulators::{ModelSpec, SimulatorModel};
