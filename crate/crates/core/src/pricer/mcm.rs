//! Backward stopping-time recursion with Malliavin continuation estimates.
//!
//! At each exercise date every in-the-money path is a query point `x`; its
//! continuation value is a quotient of kernel-weighted means over the whole
//! path population (square Monte Carlo).

use serde::{Deserialize, Serialize};

use crate::kernels::DiagonalKernelParams;
use crate::market::AssetPaths;
use crate::pairs::{self, ExpLinearKernel, IndicatorKernel, PairKernel, PairMoments, PairSums};
use crate::ratio::{self, Provenance, QuotientPlan, QuotientStats, Regime, StatSource};
use crate::weights::{self, DENOMINATOR_FLOOR};

use super::{ExerciseState, Payoff, PricerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Least-squares regression baseline.
    #[serde(rename = "LS")]
    Ls,
    /// Closed-form denominator.
    P1,
    /// Simulated denominator on the same paths as the numerator.
    #[serde(rename = "P2eq")]
    P2Eq,
    /// Simulated denominator with the optimal numerator/denominator split.
    #[serde(rename = "P2opt")]
    P2Opt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ls => "LS",
            Method::P1 => "P1",
            Method::P2Eq => "P2eq",
            Method::P2Opt => "P2opt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = PricerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LS" | "ls" => Ok(Method::Ls),
            "P1" | "p1" => Ok(Method::P1),
            "P2eq" | "p2eq" => Ok(Method::P2Eq),
            "P2opt" | "p2opt" => Ok(Method::P2Opt),
            other => Err(PricerError::InvalidArgument(format!(
                "unknown method '{other}'"
            ))),
        }
    }
}

/// Source of the statistics behind the optimal split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Calibration {
    /// Closed-form denominator mean and variance where available, pilot otherwise.
    Closed,
    /// One pilot pass over all paths.
    M1,
    /// Fixed-point refinement of the subsampled mean.
    M2 { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScope {
    /// One plan per exercise date, pooled over query points.
    Pooled,
    /// One plan per query point.
    PerQuery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmOptions {
    pub method: Method,
    pub conditioning: bool,
    pub calibration: Calibration,
    pub scope: CalibrationScope,
    pub leave_one_out: bool,
}

impl McmOptions {
    pub fn new(method: Method, conditioning: bool) -> Self {
        Self {
            method,
            conditioning,
            calibration: Calibration::M1,
            scope: CalibrationScope::Pooled,
            leave_one_out: false,
        }
    }
}

/// What happened at one exercise date.
#[derive(Debug, Clone, PartialEq)]
pub struct DateReport {
    pub date: usize,
    pub queries: usize,
    pub exercised: usize,
    pub fallbacks: usize,
    pub conditioned: bool,
    /// Split chosen for the date (pooled scope, P2opt only).
    pub plan: Option<QuotientPlan>,
    pub calibration_converged: bool,
}

/// Result of one backward sweep on one path population.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub price: f64,
    /// Value of exercising only at maturity on the same paths.
    pub european: f64,
    pub fallbacks: usize,
    pub state: ExerciseState,
    pub dates: Vec<DateReport>,
}

/// Kernel data for one date pair, scaled so that values are at most one.
enum DateKernel {
    Conditioned(ExpLinearKernel),
    Raw(IndicatorKernel),
}

/// Closed-form per-query quantities in kernel units.
struct ClosedForms {
    mean: Vec<f64>,
    second_moment: Vec<f64>,
}

struct DateSetup {
    kernel: DateKernel,
    closed: Option<ClosedForms>,
    /// Denominators at or below this are degenerate.
    floor: f64,
    conditioned: bool,
}

fn build_date(
    paths: &AssetPaths,
    k: usize,
    queries: &[usize],
    conditioning: bool,
) -> Result<DateSetup, PricerError> {
    let d = paths.dim();
    let s = paths.grid().date(k);
    let t = paths.grid().date(k + 1);
    let params = DiagonalKernelParams::from_vol(paths.vol(), paths.s0(), paths.rate(), s, t).ok();
    let x_of = |q: usize, i: usize| paths.s(k, i)[q];

    if conditioning {
        if let Some(p) = &params {
            let n = paths.n_paths();
            let features: Vec<Vec<f64>> = (0..d).map(|i| paths.w(k + 1, i).to_vec()).collect();
            let mut bias = vec![0.0; n];
            for (i, f) in features.iter().enumerate() {
                for (b, &w) in bias.iter_mut().zip(f) {
                    *b += p.log_kernel_tail(i, w);
                }
            }
            let mut slopes = Vec::with_capacity(queries.len() * d);
            let mut offsets = Vec::with_capacity(queries.len());
            let mut mean = Vec::with_capacity(queries.len());
            let mut second = Vec::with_capacity(queries.len());
            for &q in queries {
                let mut c_sum = 0.0;
                let mut peak = 0.0;
                let mut log_d = 0.0;
                let mut log_m2 = 0.0;
                for i in 0..d {
                    let x = x_of(q, i);
                    let (c, a) = p.log_kernel_coefficients(i, x);
                    slopes.push(a);
                    c_sum += c;
                    peak += p.log_kernel_peak(i, a);
                    log_d += p.log_denominator_k(i, x);
                    log_m2 += p.log_second_moment_k(i, x);
                }
                let shift = c_sum + peak;
                offsets.push(c_sum - shift);
                mean.push((log_d - shift).exp());
                second.push((log_m2 - 2.0 * shift).exp());
            }
            return Ok(DateSetup {
                kernel: DateKernel::Conditioned(ExpLinearKernel::new(
                    &features, &bias, slopes, offsets,
                )),
                closed: Some(ClosedForms {
                    mean,
                    second_moment: second,
                }),
                floor: 0.0,
                conditioned: true,
            });
        }
    }

    let w = weights::path_weights(paths, k, k + 1)?;
    let mean_abs = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    let levels: Vec<Vec<f64>> = (0..d).map(|i| paths.s(k, i).to_vec()).collect();
    let thresholds: Vec<f64> = queries
        .iter()
        .flat_map(|&q| (0..d).map(move |i| x_of(q, i)))
        .collect();
    let closed = params.as_ref().map(|p| {
        let scale = p.raw_scale();
        let mean = queries
            .iter()
            .map(|&q| {
                (0..d)
                    .map(|i| p.log_denominator_k(i, x_of(q, i)))
                    .sum::<f64>()
                    .exp()
                    / scale
            })
            .collect();
        ClosedForms {
            mean,
            second_moment: Vec::new(),
        }
    });
    Ok(DateSetup {
        kernel: DateKernel::Raw(IndicatorKernel::new(&levels, &w, thresholds)),
        closed,
        floor: DENOMINATOR_FLOOR * mean_abs,
        conditioned: false,
    })
}

struct DateOutcome {
    continuation: Vec<f64>,
    fallbacks: usize,
    plan: Option<QuotientPlan>,
    converged: bool,
}

/// Sums for one query after the optional leave-one-out correction.
fn query_moments<K: PairKernel>(
    kernel: &K,
    g: &[f64],
    sums: &PairSums,
    qi: usize,
    path: usize,
    loo: bool,
) -> PairMoments {
    let mut m = sums.totals[qi];
    if loo {
        let kv = kernel.eval_one(qi, path);
        let xv = kv * g[path];
        m.n -= 1;
        m.x -= xv;
        m.y -= kv;
        m.xx -= xv * xv;
        m.xy -= xv * kv;
        m.yy -= kv * kv;
    }
    m
}

fn query_prefix<K: PairKernel>(
    kernel: &K,
    g: &[f64],
    sums: &PairSums,
    qi: usize,
    path: usize,
    n: usize,
    loo: bool,
) -> [f64; 2] {
    let mut p = pairs::prefix(kernel, g, sums, qi, n);
    if loo && path < n {
        let kv = kernel.eval_one(qi, path);
        p[0] -= kv * g[path];
        p[1] -= kv;
    }
    p
}

fn to_ratio_moments(m: &PairMoments) -> ratio::Moments {
    ratio::Moments {
        n: m.n,
        x: m.x,
        y: m.y,
        xx: m.xx,
        xy: m.xy,
        yy: m.yy,
    }
}

fn query_stats(
    m: &PairMoments,
    closed: Option<(&ClosedForms, usize)>,
    calibration: Calibration,
) -> QuotientStats {
    let mut st = to_ratio_moments(m).stats();
    if let (Calibration::Closed, Some((c, qi))) = (calibration, closed) {
        let b = c.mean[qi];
        let pilot_s2 = st.sigma2;
        st.b = b;
        let mut prov = Provenance {
            b: StatSource::ClosedForm,
            ..Provenance::PILOT
        };
        if let Some(&m2) = c.second_moment.get(qi) {
            st.sigma2 = (m2 - b * b).max(0.0).sqrt();
            prov.sigma2 = StatSource::ClosedForm;
            if pilot_s2 > 0.0 && st.sigma2 > 0.0 {
                st.rho = (st.rho * pilot_s2 / st.sigma2).clamp(-1.0, 1.0);
            }
        }
        st.provenance = prov;
    }
    st
}

fn estimate_date<K: PairKernel>(
    kernel: &K,
    g: &[f64],
    queries: &[usize],
    setup: &DateSetup,
    opts: &McmOptions,
) -> Result<DateOutcome, PricerError> {
    let sums = pairs::accumulate(kernel, g);
    let loo = opts.leave_one_out;
    let nq = queries.len();
    let moments: Vec<PairMoments> = (0..nq)
        .map(|qi| query_moments(kernel, g, &sums, qi, queries[qi], loo))
        .collect();
    let n_samples = kernel.n_samples();
    let mut continuation = vec![f64::INFINITY; nq];
    let mut fallbacks = 0;
    let mut plan_out = None;
    let mut converged = true;

    let valid_den = |den: f64| den.is_finite() && den > setup.floor;

    match opts.method {
        Method::P1 => {
            let closed = setup.closed.as_ref().ok_or_else(|| {
                PricerError::MethodUnavailable(
                    "P1 needs a closed-form denominator (diagonal constant volatility)".into(),
                )
            })?;
            for qi in 0..nq {
                let m = &moments[qi];
                let den = closed.mean[qi];
                let c = (m.x / m.n as f64) / den;
                if valid_den(den) && c.is_finite() {
                    continuation[qi] = c;
                } else {
                    fallbacks += 1;
                }
            }
        }
        Method::P2Eq => {
            for qi in 0..nq {
                let m = &moments[qi];
                let c = m.x / m.y;
                if valid_den(m.y / m.n as f64) && c.is_finite() {
                    continuation[qi] = c;
                } else {
                    fallbacks += 1;
                }
            }
        }
        Method::P2Opt => {
            let closed = setup.closed.as_ref();
            let stats: Vec<Option<QuotientStats>> = (0..nq)
                .map(|qi| {
                    let m = &moments[qi];
                    if !valid_den(m.y / m.n as f64) {
                        return None;
                    }
                    let st = query_stats(m, closed.map(|c| (c, qi)), opts.calibration);
                    st.validate().ok().map(|_| st)
                })
                .collect();
            let n_max = n_samples;
            let pooled_plan = |stats: &[Option<QuotientStats>]| -> Option<QuotientPlan> {
                ratio::pooled_stats(stats.iter().flatten())
                    .and_then(|p| ratio::optimal_plan(&p, n_max).ok())
            };
            let plans: Vec<Option<QuotientPlan>> = match opts.scope {
                CalibrationScope::Pooled => {
                    let mut plan = pooled_plan(&stats);
                    if let (Calibration::M2 { eps }, Some(p0)) = (opts.calibration, plan.clone()) {
                        let (p, ok) =
                            refine_pooled(kernel, g, &sums, queries, &stats, p0, eps, loo);
                        plan = Some(p);
                        converged = ok;
                    }
                    plan_out = plan.clone();
                    vec![plan; nq]
                }
                CalibrationScope::PerQuery => stats
                    .iter()
                    .map(|s| s.as_ref().and_then(|s| ratio::optimal_plan(s, n_max).ok()))
                    .collect(),
            };
            for qi in 0..nq {
                let m = &moments[qi];
                let (Some(plan), Some(_)) = (&plans[qi], &stats[qi]) else {
                    fallbacks += 1;
                    continue;
                };
                let (num, den) = split_means(kernel, g, &sums, qi, queries[qi], m, plan, loo);
                let c = num / den;
                if valid_den(den) && c.is_finite() {
                    continuation[qi] = c;
                } else {
                    fallbacks += 1;
                }
            }
        }
        Method::Ls => unreachable!("least squares is priced separately"),
    }
    Ok(DateOutcome {
        continuation,
        fallbacks,
        plan: plan_out,
        converged,
    })
}

/// Numerator and denominator means under the sample split of `plan`.
#[allow(clippy::too_many_arguments)]
fn split_means<K: PairKernel>(
    kernel: &K,
    g: &[f64],
    sums: &PairSums,
    qi: usize,
    path: usize,
    m: &PairMoments,
    plan: &QuotientPlan,
    loo: bool,
) -> (f64, f64) {
    let count = |n: usize| if loo && path < n { n - 1 } else { n } as f64;
    match plan.regime {
        Regime::Case1 => {
            let n = plan.n_numerator;
            let p = query_prefix(kernel, g, sums, qi, path, n, loo);
            (p[0] / count(n).max(1.0), m.y / m.n as f64)
        }
        Regime::Case2 => {
            let n = plan.n_denominator;
            let p = query_prefix(kernel, g, sums, qi, path, n, loo);
            (m.x / m.n as f64, p[1] / count(n).max(1.0))
        }
    }
}

/// Pooled fixed-point iteration: the subsampled mean of every query is
/// re-estimated on the current prefix and the pooled plan recomputed.
#[allow(clippy::too_many_arguments)]
fn refine_pooled<K: PairKernel>(
    kernel: &K,
    g: &[f64],
    sums: &PairSums,
    queries: &[usize],
    stats: &[Option<QuotientStats>],
    mut plan: QuotientPlan,
    eps: f64,
    loo: bool,
) -> (QuotientPlan, bool) {
    let n_max = plan.n_max;
    for _ in 0..ratio::M2_MAX_ITER {
        let n = match plan.regime {
            Regime::Case1 => plan.n_numerator,
            Regime::Case2 => plan.n_denominator,
        };
        let updated: Vec<QuotientStats> = stats
            .iter()
            .enumerate()
            .filter_map(|(qi, s)| s.map(|s| (qi, s)))
            .map(|(qi, mut s)| {
                let p = query_prefix(kernel, g, sums, qi, queries[qi], n, loo);
                let cnt = if loo && queries[qi] < n { n - 1 } else { n }.max(1) as f64;
                match plan.regime {
                    Regime::Case1 => s.a = p[0] / cnt,
                    Regime::Case2 => s.b = p[1] / cnt,
                }
                s
            })
            .collect();
        let Some(pooled) = ratio::pooled_stats(updated.iter()) else {
            return (plan, false);
        };
        // Keep the regime; move lambda to the refreshed optimum.
        let rho = pooled.rho;
        let lambda_new = match plan.regime {
            Regime::Case1 if pooled.sigma2 > 0.0 => {
                0.5 + pooled.sigma1 * rho / (2.0 * pooled.sigma2)
            }
            Regime::Case2 if pooled.sigma1 > 0.0 => {
                0.5 + pooled.sigma2 * rho / (2.0 * pooled.sigma1)
            }
            _ => 0.5,
        };
        let clamped = if lambda_new.is_finite() {
            lambda_new.clamp(1.0 / n_max as f64, 1.0)
        } else {
            0.5
        };
        let done = (clamped - plan.lambda).abs() < eps;
        plan.stats = pooled;
        plan.lambda_raw = lambda_new;
        if plan.set_lambda(clamped).is_err() {
            return (plan, false);
        }
        if done {
            return (plan, true);
        }
    }
    (plan, false)
}

/// One backward sweep with Malliavin continuation estimates on `paths`.
pub fn price_mcm(
    paths: &AssetPaths,
    payoff: &Payoff,
    opts: &McmOptions,
) -> Result<SweepResult, PricerError> {
    if payoff.dim() != paths.dim() {
        return Err(PricerError::DimensionMismatch {
            expected: paths.dim(),
            got: payoff.dim(),
        });
    }
    if opts.method == Method::Ls {
        return Err(PricerError::InvalidArgument(
            "use price_ls for the regression baseline".into(),
        ));
    }
    if let Calibration::M2 { eps } = opts.calibration {
        if !(eps > 0.0) {
            return Err(PricerError::InvalidArgument(
                "M2 tolerance must be positive".into(),
            ));
        }
    }
    let n = paths.n_paths();
    let steps = paths.grid().n_steps();
    let dt = paths.grid().dt();
    let disc = (-paths.rate() * dt).exp();
    let payoff_at = |k: usize, p: usize| payoff.value(&paths.s_vector(k, p));

    let mut state =
        ExerciseState::at_maturity((0..n).map(|p| payoff_at(steps, p)).collect(), steps);
    let european =
        state.cash.iter().sum::<f64>() / n as f64 * (-paths.rate() * paths.grid().maturity()).exp();
    let mut value = state.cash.clone();
    let mut fallbacks = 0;
    let mut reports = Vec::with_capacity(steps.saturating_sub(1));

    for k in (1..steps).rev() {
        let g: Vec<f64> = value.iter().map(|v| disc * v).collect();
        let exercise: Vec<f64> = (0..n).map(|p| payoff_at(k, p)).collect();
        let queries: Vec<usize> = (0..n).filter(|&p| exercise[p] > 0.0).collect();
        let mut report = DateReport {
            date: k,
            queries: queries.len(),
            exercised: 0,
            fallbacks: 0,
            conditioned: false,
            plan: None,
            calibration_converged: true,
        };
        value = g.clone();
        if !queries.is_empty() {
            let setup = build_date(paths, k, &queries, opts.conditioning)?;
            report.conditioned = setup.conditioned;
            let outcome = match &setup.kernel {
                DateKernel::Conditioned(kern) => estimate_date(kern, &g, &queries, &setup, opts)?,
                DateKernel::Raw(kern) => estimate_date(kern, &g, &queries, &setup, opts)?,
            };
            for (qi, &p) in queries.iter().enumerate() {
                if exercise[p] > outcome.continuation[qi] {
                    value[p] = exercise[p];
                    state.exercise(p, k, exercise[p]);
                    report.exercised += 1;
                }
            }
            report.fallbacks = outcome.fallbacks;
            report.plan = outcome.plan;
            report.calibration_converged = outcome.converged;
            fallbacks += outcome.fallbacks;
        }
        reports.push(report);
    }
    let continuation = disc * value.iter().sum::<f64>() / n as f64;
    let immediate = payoff.value(paths.s0());
    Ok(SweepResult {
        price: continuation.max(immediate),
        european,
        fallbacks,
        state,
        dates: reports,
    })
}
