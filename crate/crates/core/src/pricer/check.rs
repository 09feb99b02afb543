//! Single-date conditional expectation against the exact lognormal law.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::kernels::{conditioned_continuation, DenominatorSource};
use crate::market::{build_vol, simulate_paths, TimeGrid, VolSpec};
use crate::weights::raw_continuation;

use super::PricerError;

/// `E[(K - S_t)_+ | S_s = x]` for a lognormal asset with rate `r` and volatility `sigma`.
pub fn lognormal_put_conditional(x: f64, strike: f64, rate: f64, sigma: f64, horizon: f64) -> f64 {
    let n = Normal::standard();
    let sd = sigma * horizon.sqrt();
    let d1 = ((x / strike).ln() + (rate + 0.5 * sigma * sigma) * horizon) / sd;
    let d2 = d1 - sd;
    strike * n.cdf(-d2) - x * (rate * horizon).exp() * n.cdf(-d1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub sigma: f64,
    pub s0: f64,
    pub rate: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub conditioning: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            s0: 100.0,
            rate: 1.1f64.ln(),
            n_paths: 1 << 18,
            seed: 2024,
            conditioning: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    pub estimate: f64,
    pub oracle: f64,
}

impl CheckResult {
    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.oracle).abs() / self.oracle.abs()
    }
}

/// Exercise grid on `[0, t]` containing `s` as a date.
fn grid_through(s: f64, t: f64) -> Result<(TimeGrid, usize), PricerError> {
    for n in 2..=1000usize {
        let k = (s / t * n as f64).round() as usize;
        if k >= 1 && k < n && ((k as f64 * t / n as f64) - s).abs() < 1e-12 {
            return Ok((TimeGrid::new(t, n)?, k));
        }
    }
    Err(PricerError::InvalidArgument(format!(
        "no grid of at most 1000 steps hits s = {s} on [0, {t}]"
    )))
}

/// Malliavin estimate of `E[(K - S_t)_+ | S_s = x]` in one dimension next to the exact value.
pub fn conditional_expectation_check(
    s: f64,
    t: f64,
    x: f64,
    strike: f64,
    opts: &CheckOptions,
) -> Result<CheckResult, PricerError> {
    if !(s > 0.0 && t > s) {
        return Err(PricerError::InvalidArgument(format!(
            "need 0 < s < t, got s = {s}, t = {t}"
        )));
    }
    let (grid, s_index) = grid_through(s, t)?;
    let t_index = grid.n_steps();
    let vol = build_vol(1, &VolSpec::diagonal(opts.sigma))?;
    let paths = simulate_paths(&vol, &grid, &[opts.s0], opts.rate, opts.n_paths, opts.seed)?;
    let g: Vec<f64> = paths
        .s(t_index, 0)
        .iter()
        .map(|v| (strike - v).max(0.0))
        .collect();
    let means = if opts.conditioning {
        conditioned_continuation(
            &paths,
            s_index,
            t_index,
            &[x],
            &g,
            DenominatorSource::Simulated,
        )?
    } else {
        raw_continuation(&paths, s_index, t_index, &[x], &g)?
    };
    Ok(CheckResult {
        estimate: means.quotient(),
        oracle: lognormal_put_conditional(x, strike, opts.rate, opts.sigma, t - s),
    })
}
