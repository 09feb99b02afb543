//! Cox-Ross-Rubinstein binomial tree for American puts on one asset with a continuous yield.

use super::PricerError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub vol: f64,
    pub dividend_yield: f64,
    pub maturity: f64,
}

/// One-asset equivalent of the geometric mean `(prod S_i)^(1/d)` under diagonal volatility.
///
/// The geometric mean is lognormal with variance rate `sum sigma_i^2 / d^2` and drift
/// `r - q` where `q = sum sigma_i^2 / (2 d) - vol^2 / 2`.
pub fn geometric_equivalent(
    sigmas: &[f64],
    s0: &[f64],
    strike: f64,
    rate: f64,
    maturity: f64,
) -> Result<TreeParams, PricerError> {
    if sigmas.is_empty() || sigmas.len() != s0.len() {
        return Err(PricerError::DimensionMismatch {
            expected: sigmas.len().max(1),
            got: s0.len(),
        });
    }
    let d = sigmas.len() as f64;
    let sum_var: f64 = sigmas.iter().map(|s| s * s).sum();
    let var = sum_var / (d * d);
    let spot = (s0.iter().map(|v| v.ln()).sum::<f64>() / d).exp();
    Ok(TreeParams {
        spot,
        strike,
        rate,
        vol: var.sqrt(),
        dividend_yield: sum_var / (2.0 * d) - var / 2.0,
        maturity,
    })
}

pub fn price_tree_1d(p: &TreeParams, steps: usize) -> Result<f64, PricerError> {
    if steps == 0 {
        return Err(PricerError::InvalidArgument(
            "tree needs at least one step".into(),
        ));
    }
    if !(p.vol > 0.0 && p.spot > 0.0 && p.maturity > 0.0) {
        return Err(PricerError::InvalidArgument(format!(
            "invalid tree parameters {p:?}"
        )));
    }
    let dt = p.maturity / steps as f64;
    let up = (p.vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = ((p.rate - p.dividend_yield) * dt).exp();
    let prob = (growth - down) / (up - down);
    if !(0.0..=1.0).contains(&prob) {
        return Err(PricerError::InvalidArgument(format!(
            "tree is not arbitrage-free with {steps} steps (p = {prob})"
        )));
    }
    let disc = (-p.rate * dt).exp();
    let (pu, pd) = (disc * prob, disc * (1.0 - prob));
    let ln_up = up.ln();
    let spot_at = |i: usize, j: usize| p.spot * ((2.0 * j as f64 - i as f64) * ln_up).exp();
    let mut values: Vec<f64> = (0..=steps)
        .map(|j| (p.strike - spot_at(steps, j)).max(0.0))
        .collect();
    for i in (0..steps).rev() {
        for j in 0..=i {
            let cont = pd * values[j] + pu * values[j + 1];
            values[j] = cont.max(p.strike - spot_at(i, j));
        }
    }
    Ok(values[0])
}
