//! Monte Carlo pricing of American and Bermudan options under multi-dimensional
//! exponential diffusions with deterministic triangular volatility.
//!
//! Continuation values are estimated with Malliavin-calculus weights instead of
//! regression, optionally Rao-Blackwellized through closed-form conditional
//! kernels, and the ratio of the two Monte Carlo means can use an optimal
//! numerator/denominator sample split.

pub mod kernels;
pub mod market;
pub mod pairs;
pub mod pricer;
pub mod ratio;
pub mod weights;
