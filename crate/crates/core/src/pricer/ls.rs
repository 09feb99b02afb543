//! Longstaff-Schwartz regression baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::market::AssetPaths;

use super::mcm::{DateReport, SweepResult};
use super::{ExerciseState, Payoff, PricerError};

const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsBasis {
    /// `1, S_i / K`.
    Linear,
    /// `1` and powers one to three of each `S_i / K`.
    Cubic,
    /// Cubic in one dimension, linear otherwise.
    Auto,
}

impl LsBasis {
    fn resolve(self, dim: usize) -> LsBasis {
        match self {
            LsBasis::Auto if dim == 1 => LsBasis::Cubic,
            LsBasis::Auto => LsBasis::Linear,
            other => other,
        }
    }

    fn size(self, dim: usize) -> usize {
        match self.resolve(dim) {
            LsBasis::Cubic => 1 + 3 * dim,
            _ => 1 + dim,
        }
    }

    fn fill(self, s: &[f64], scale: f64, out: &mut [f64]) {
        out[0] = 1.0;
        let cubic = self.resolve(s.len()) == LsBasis::Cubic;
        for (i, v) in s.iter().enumerate() {
            let x = v / scale;
            if cubic {
                out[1 + 3 * i] = x;
                out[2 + 3 * i] = x * x;
                out[3 + 3 * i] = x * x * x;
            } else {
                out[1 + i] = x;
            }
        }
    }
}

/// Least-squares coefficients, with a small ridge when the normal equations are singular.
fn regress(design: &DMatrix<f64>, target: &DVector<f64>) -> (DVector<f64>, bool) {
    let xtx = design.transpose() * design;
    let xty = design.transpose() * target;
    if let Some(ch) = xtx.clone().cholesky() {
        let beta = ch.solve(&xty);
        if beta.iter().all(|v| v.is_finite()) {
            return (beta, false);
        }
    }
    let p = xtx.nrows();
    let trace = xtx.trace().abs().max(1.0);
    let ridged = xtx + DMatrix::identity(p, p) * (RIDGE * trace);
    let beta = match ridged.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => ridged.lu().solve(&xty).unwrap_or_else(|| DVector::zeros(p)),
    };
    (beta, true)
}

/// One backward sweep with regression-based continuation values on in-the-money paths.
pub fn price_ls(
    paths: &AssetPaths,
    payoff: &Payoff,
    basis: LsBasis,
) -> Result<SweepResult, PricerError> {
    if payoff.dim() != paths.dim() {
        return Err(PricerError::DimensionMismatch {
            expected: paths.dim(),
            got: payoff.dim(),
        });
    }
    let n = paths.n_paths();
    let d = paths.dim();
    let steps = paths.grid().n_steps();
    let disc = (-paths.rate() * paths.grid().dt()).exp();
    let scale = if payoff.strike() > 0.0 {
        payoff.strike()
    } else {
        1.0
    };
    let payoff_at = |k: usize, p: usize| payoff.value(&paths.s_vector(k, p));
    let p_size = basis.size(d);

    let mut state =
        ExerciseState::at_maturity((0..n).map(|p| payoff_at(steps, p)).collect(), steps);
    let european =
        state.cash.iter().sum::<f64>() / n as f64 * (-paths.rate() * paths.grid().maturity()).exp();
    let mut value = state.cash.clone();
    let mut ridged = 0;
    let mut reports = Vec::new();
    let mut row = vec![0.0; p_size];
    for k in (1..steps).rev() {
        for v in value.iter_mut() {
            *v *= disc;
        }
        let exercise: Vec<f64> = (0..n).map(|p| payoff_at(k, p)).collect();
        let itm: Vec<usize> = (0..n).filter(|&p| exercise[p] > 0.0).collect();
        let mut report = DateReport {
            date: k,
            queries: itm.len(),
            exercised: 0,
            fallbacks: 0,
            conditioned: false,
            plan: None,
            calibration_converged: true,
        };
        if !itm.is_empty() {
            let mut design = DMatrix::zeros(itm.len(), p_size);
            for (r, &p) in itm.iter().enumerate() {
                basis.fill(&paths.s_vector(k, p), scale, &mut row);
                for (c, v) in row.iter().enumerate() {
                    design[(r, c)] = *v;
                }
            }
            let target = DVector::from_iterator(itm.len(), itm.iter().map(|&p| value[p]));
            let (beta, used_ridge) = regress(&design, &target);
            if used_ridge {
                ridged += 1;
                report.fallbacks = 1;
            }
            let fitted = &design * beta;
            for (r, &p) in itm.iter().enumerate() {
                if exercise[p] > fitted[r] {
                    value[p] = exercise[p];
                    state.exercise(p, k, exercise[p]);
                    report.exercised += 1;
                }
            }
        }
        reports.push(report);
    }
    let continuation = disc * value.iter().sum::<f64>() / n as f64;
    Ok(SweepResult {
        price: continuation.max(payoff.value(paths.s0())),
        european,
        fallbacks: ridged,
        state,
        dates: reports,
    })
}
