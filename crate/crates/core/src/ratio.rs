//! Delta-method variance model for quotients of Monte Carlo means and the
//! optimal split between numerator and denominator sample sizes.
//!
//! For i.i.d. pairs `(X, Y)` with `A = E X`, `B = E Y`, the quotient uses the
//! first `N'` samples for the numerator and the first `N` for the denominator.
//! In case 1 the numerator is subsampled (`N' = lambda N`), in case 2 the
//! denominator is (`N = lambda N'`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative floor on `|B|`: the quotient is undefined below `1e-10 (1 + |A|)`.
pub const DENOMINATOR_EPS: f64 = 1e-10;

/// Iteration cap for the fixed-point calibration.
pub const M2_MAX_ITER: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatioError {
    #[error("denominator mean {b} is too close to zero (floor {floor})")]
    DenominatorMeanNearZero { b: f64, floor: f64 },
    #[error("denominator sample mean {value} is too close to zero")]
    DenominatorSampleNearZero { value: f64 },
    #[error("fixed-point calibration did not converge after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        last: Box<QuotientPlan>,
    },
    #[error("invalid statistics: {0}")]
    InvalidStats(String),
    #[error("expected {expected} samples, got {got}")]
    SampleCountMismatch { expected: usize, got: usize },
}

/// Where a statistic comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatSource {
    ClosedForm,
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub a: StatSource,
    pub b: StatSource,
    pub sigma1: StatSource,
    pub sigma2: StatSource,
    pub rho: StatSource,
}

impl Provenance {
    pub const PILOT: Provenance = Provenance {
        a: StatSource::Pilot,
        b: StatSource::Pilot,
        sigma1: StatSource::Pilot,
        sigma2: StatSource::Pilot,
        rho: StatSource::Pilot,
    };
}

/// Means, standard deviations and correlation of a numerator/denominator pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientStats {
    pub a: f64,
    pub b: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub provenance: Provenance,
}

/// Running sums of `(X, Y)` pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.xy += x * y;
        self.yy += y * y;
    }

    pub fn from_pairs(xs: &[f64], ys: &[f64]) -> Self {
        let mut m = Moments::default();
        for (&x, &y) in xs.iter().zip(ys) {
            m.push(x, y);
        }
        m
    }

    /// Pilot statistics with unbiased variances.
    pub fn stats(&self) -> QuotientStats {
        let n = self.n as f64;
        let a = self.x / n;
        let b = self.y / n;
        let denom = (n - 1.0).max(1.0);
        let vx = ((self.xx - n * a * a) / denom).max(0.0);
        let vy = ((self.yy - n * b * b) / denom).max(0.0);
        let cxy = (self.xy - n * a * b) / denom;
        let (s1, s2) = (vx.sqrt(), vy.sqrt());
        let rho = if s1 > 0.0 && s2 > 0.0 {
            (cxy / (s1 * s2)).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        QuotientStats {
            a,
            b,
            sigma1: s1,
            sigma2: s2,
            rho,
            provenance: Provenance::PILOT,
        }
    }
}

impl QuotientStats {
    pub fn new(a: f64, b: f64, sigma1: f64, sigma2: f64, rho: f64) -> Result<Self, RatioError> {
        let s = Self {
            a,
            b,
            sigma1,
            sigma2,
            rho,
            provenance: Provenance::PILOT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn validate(&self) -> Result<(), RatioError> {
        let all = [self.a, self.b, self.sigma1, self.sigma2, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RatioError::InvalidStats(format!(
                "non-finite statistic in {self:?}"
            )));
        }
        if self.sigma1 < 0.0 || self.sigma2 < 0.0 {
            return Err(RatioError::InvalidStats(
                "standard deviations must be non-negative".into(),
            ));
        }
        if self.rho.abs() > 1.0 {
            return Err(RatioError::InvalidStats(format!(
                "|rho| = {} exceeds 1",
                self.rho.abs()
            )));
        }
        let floor = DENOMINATOR_EPS * (1.0 + self.a.abs());
        if self.b.abs() < floor {
            return Err(RatioError::DenominatorMeanNearZero { b: self.b, floor });
        }
        Ok(())
    }

    /// Correlation used by the plan: zero when either variance vanishes.
    fn effective_rho(&self) -> f64 {
        if self.sigma1 > 0.0 && self.sigma2 > 0.0 {
            self.rho
        } else {
            0.0
        }
    }

    /// Whether `A^2 sigma2^2 >= B^2 sigma1^2`, i.e. the numerator is subsampled.
    pub fn prefers_case1(&self) -> bool {
        self.sigma2 > 0.0
            && self.a * self.a * self.sigma2 * self.sigma2
                >= self.b * self.b * self.sigma1 * self.sigma1
    }
}

/// Asymptotic variance `Sigma_1(lambda)` of the case-1 quotient.
pub fn sigma1_of_lambda(stats: &QuotientStats, lambda: f64) -> Result<f64, RatioError> {
    stats.validate()?;
    let QuotientStats {
        a,
        b,
        sigma1,
        sigma2,
        ..
    } = *stats;
    let rho = stats.effective_rho();
    let q = 2.0 * lambda * lambda - 2.0 * lambda + 1.0;
    Ok((q * (a * a) / (b * b) * sigma2 * sigma2 + sigma1 * sigma1
        - 2.0 * lambda * a / b * sigma1 * sigma2 * rho)
        / (b * b))
}

/// Asymptotic variance `Sigma_2(lambda)` of the case-2 quotient.
pub fn sigma2_of_lambda(stats: &QuotientStats, lambda: f64) -> Result<f64, RatioError> {
    stats.validate()?;
    let QuotientStats {
        a,
        b,
        sigma1,
        sigma2,
        ..
    } = *stats;
    let rho = stats.effective_rho();
    let q = 2.0 * lambda * lambda - 2.0 * lambda + 1.0;
    Ok((q * sigma1 * sigma1 + (a * a) / (b * b) * sigma2 * sigma2
        - 2.0 * lambda * a / b * sigma1 * sigma2 * rho)
        / (b * b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Numerator over the first `lambda N` samples, denominator over all `N`.
    Case1,
    /// Numerator over all `N'` samples, denominator over the first `lambda N'`.
    Case2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Procedure {
    /// Closed-form denominator.
    P1,
    /// Simulated denominator.
    P2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientPlan {
    pub stats: QuotientStats,
    pub regime: Regime,
    /// Unclamped optimum from the minimizing formula.
    pub lambda_raw: f64,
    pub lambda: f64,
    /// `Sigma(lambda)` of the selected regime.
    pub predicted_variance: f64,
    pub procedure: Procedure,
    pub n_max: usize,
    pub n_numerator: usize,
    pub n_denominator: usize,
}

impl QuotientPlan {
    /// Plan using every sample for both means.
    pub fn full(stats: QuotientStats, n_max: usize) -> Result<Self, RatioError> {
        let mut p = optimal_plan(&stats, n_max)?;
        p.set_lambda(1.0)?;
        Ok(p)
    }

    /// Overrides `lambda` (clamped) and recomputes counts and predicted variance.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), RatioError> {
        let lo = 1.0 / self.n_max as f64;
        self.lambda = if lambda.is_finite() {
            lambda.clamp(lo, 1.0)
        } else {
            0.5
        };
        let sub = resolve_count(self.lambda, self.n_max);
        match self.regime {
            Regime::Case1 => {
                self.n_numerator = sub;
                self.n_denominator = self.n_max;
                self.predicted_variance = sigma1_of_lambda(&self.stats, self.lambda)?;
            }
            Regime::Case2 => {
                self.n_numerator = self.n_max;
                self.n_denominator = sub;
                self.predicted_variance = sigma2_of_lambda(&self.stats, self.lambda)?;
            }
        }
        Ok(())
    }

    /// Variance of `sqrt(N_max) (Q - A/B)` for this subsample design.
    ///
    /// The first `min(N, N')` pairs are shared by both means, so the covariance
    /// term scales with the larger sample.
    pub fn design_variance(&self) -> f64 {
        let QuotientStats {
            a,
            b,
            sigma1,
            sigma2,
            ..
        } = self.stats;
        let rho = self.stats.effective_rho();
        let nm = self.n_max as f64;
        let fx = nm / self.n_numerator as f64;
        let fy = nm / self.n_denominator as f64;
        let fxy = nm / self.n_numerator.max(self.n_denominator) as f64;
        (sigma1 * sigma1 * fx + a * a * sigma2 * sigma2 / (b * b) * fy
            - 2.0 * a / b * rho * sigma1 * sigma2 * fxy)
            / (b * b)
    }
}

/// `max(1, round(lambda n))`.
pub fn resolve_count(lambda: f64, n: usize) -> usize {
    ((lambda * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Case-1 correlation condition under which the simulated denominator beats the closed form.
///
/// Equivalent to `B^2 Sigma_1(lambda_1) < sigma1^2` at the unclamped optimum.
pub fn simulated_denominator_wins_case1(stats: &QuotientStats) -> bool {
    let u = stats.a * stats.sigma2 / stats.b;
    if u == 0.0 || stats.sigma1 == 0.0 {
        return false;
    }
    stats.sigma1 * stats.effective_rho() / u > std::f64::consts::SQRT_2 - 1.0
}

/// Case-2 counterpart of [`simulated_denominator_wins_case1`].
pub fn simulated_denominator_wins_case2(stats: &QuotientStats) -> bool {
    if stats.sigma1 == 0.0 {
        return false;
    }
    let u = stats.a * stats.sigma2 / stats.b;
    0.5 + u * stats.effective_rho() / (2.0 * stats.sigma1)
        > u.abs() / (stats.sigma1 * std::f64::consts::SQRT_2)
}

pub fn optimal_plan(stats: &QuotientStats, n_max: usize) -> Result<QuotientPlan, RatioError> {
    stats.validate()?;
    if n_max == 0 {
        return Err(RatioError::InvalidStats("n_max must be at least 1".into()));
    }
    let rho = stats.effective_rho();
    let (regime, lambda_raw) = if stats.prefers_case1() {
        (
            Regime::Case1,
            0.5 + stats.b * stats.sigma1 * rho / (2.0 * stats.a * stats.sigma2),
        )
    } else if stats.sigma1 == 0.0 || stats.sigma2 == 0.0 {
        (Regime::Case2, 0.5)
    } else {
        (
            Regime::Case2,
            0.5 + stats.a * stats.sigma2 * rho / (2.0 * stats.b * stats.sigma1),
        )
    };
    let lambda_raw = if lambda_raw.is_finite() {
        lambda_raw
    } else {
        0.5
    };
    let wins = match regime {
        Regime::Case1 => simulated_denominator_wins_case1(stats),
        Regime::Case2 => simulated_denominator_wins_case2(stats),
    };
    let procedure = if wins || stats.provenance.b != StatSource::ClosedForm {
        Procedure::P2
    } else {
        Procedure::P1
    };
    let mut plan = QuotientPlan {
        stats: *stats,
        regime,
        lambda_raw,
        lambda: lambda_raw,
        predicted_variance: 0.0,
        procedure,
        n_max,
        n_numerator: n_max,
        n_denominator: n_max,
    };
    plan.set_lambda(lambda_raw)?;
    Ok(plan)
}

/// Quotient of sample means following `plan`, with the delta-method standard error.
pub fn quotient_estimate(
    xs: &[f64],
    ys: &[f64],
    plan: &QuotientPlan,
) -> Result<(f64, f64), RatioError> {
    if xs.len() != plan.n_max || ys.len() != plan.n_max {
        return Err(RatioError::SampleCountMismatch {
            expected: plan.n_max,
            got: xs.len().min(ys.len()),
        });
    }
    let num = xs[..plan.n_numerator].iter().sum::<f64>() / plan.n_numerator as f64;
    let den = ys[..plan.n_denominator].iter().sum::<f64>() / plan.n_denominator as f64;
    let floor = DENOMINATOR_EPS * (1.0 + num.abs());
    if !(den.abs() >= floor) {
        return Err(RatioError::DenominatorSampleNearZero { value: den });
    }
    let se = (plan.design_variance().max(0.0) / plan.n_max as f64).sqrt();
    Ok((num / den, se))
}

fn pilot(sampler: &impl Fn(usize) -> (f64, f64), n: usize) -> Moments {
    let mut m = Moments::default();
    for i in 0..n {
        let (x, y) = sampler(i);
        m.push(x, y);
    }
    m
}

/// One pilot pass over `n_max` samples, then the optimal plan.
pub fn calibrate_m1(
    sampler: impl Fn(usize) -> (f64, f64),
    n_max: usize,
) -> Result<QuotientPlan, RatioError> {
    optimal_plan(&pilot(&sampler, n_max).stats(), n_max)
}

/// Fixed-point calibration: the subsampled mean is re-estimated on the current
/// `lambda n_max` prefix until `lambda` moves by less than `eps`.
pub fn calibrate_m2(
    sampler: impl Fn(usize) -> (f64, f64),
    n_max: usize,
    eps: f64,
) -> Result<QuotientPlan, RatioError> {
    if !(eps > 0.0) {
        return Err(RatioError::InvalidStats("eps must be positive".into()));
    }
    let mut prefix = Vec::with_capacity(n_max);
    let mut m = Moments::default();
    for i in 0..n_max {
        let (x, y) = sampler(i);
        m.push(x, y);
        prefix.push((m.x, m.y));
    }
    let base = m.stats();
    let mut plan = optimal_plan(&base, n_max)?;
    for _ in 0..M2_MAX_ITER {
        let mut stats = base;
        let lambda_new = match plan.regime {
            Regime::Case1 => {
                let n = plan.n_numerator;
                stats.a = prefix[n - 1].0 / n as f64;
                0.5 + stats.b * stats.sigma1 * stats.effective_rho()
                    / (2.0 * stats.a * stats.sigma2)
            }
            Regime::Case2 => {
                let n = plan.n_denominator;
                stats.b = prefix[n - 1].1 / n as f64;
                if stats.sigma1 == 0.0 || stats.sigma2 == 0.0 {
                    0.5
                } else {
                    0.5 + stats.a * stats.sigma2 * stats.effective_rho()
                        / (2.0 * stats.b * stats.sigma1)
                }
            }
        };
        let lambda_new = if lambda_new.is_finite() {
            lambda_new
        } else {
            0.5
        };
        let clamped = lambda_new.clamp(1.0 / n_max as f64, 1.0);
        let done = (clamped - plan.lambda).abs() < eps;
        stats.validate()?;
        plan.stats = stats;
        plan.lambda_raw = lambda_new;
        plan.set_lambda(lambda_new)?;
        if done {
            return Ok(plan);
        }
    }
    Err(RatioError::NoConvergence {
        iterations: M2_MAX_ITER,
        last: Box::new(plan),
    })
}

/// Scale-free pooling of many quotient problems into one representative problem.
///
/// Each problem contributes its squared coefficients of variation and normalized
/// covariance; the pooled problem has `A = B = 1`, so its plan minimizes the
/// mean relative variance across problems.
pub fn pooled_stats<'a>(
    stats: impl IntoIterator<Item = &'a QuotientStats>,
) -> Option<QuotientStats> {
    let mut n = 0.0;
    let (mut c1, mut c2, mut c12) = (0.0, 0.0, 0.0);
    let mut provenance = None;
    for s in stats {
        if s.validate().is_err() || s.a == 0.0 {
            continue;
        }
        n += 1.0;
        c1 += (s.sigma1 / s.a).powi(2);
        c2 += (s.sigma2 / s.b).powi(2);
        c12 += s.effective_rho() * s.sigma1 * s.sigma2 / (s.a * s.b);
        provenance.get_or_insert(s.provenance);
    }
    if n == 0.0 {
        return None;
    }
    let s1 = (c1 / n).sqrt();
    let s2 = (c2 / n).sqrt();
    let rho = if s1 > 0.0 && s2 > 0.0 {
        (c12 / n / (s1 * s2)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Some(QuotientStats {
        a: 1.0,
        b: 1.0,
        sigma1: s1,
        sigma2: s2,
        rho,
        provenance: provenance.unwrap_or(Provenance::PILOT),
    })
}
