//! American/Bermudan pricing: payoffs, the Malliavin backward sweep,
//! the least-squares baseline and the binomial-tree reference.

mod check;
mod ls;
mod mcm;
mod payoff;
mod tree;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::kernels::KernelError;
use crate::market::{simulate_paths, MarketError, TimeGrid, TriangularVol};
use crate::ratio::RatioError;
use crate::weights::WeightError;

pub use check::{
    conditional_expectation_check, lognormal_put_conditional, CheckOptions, CheckResult,
};
pub use ls::{price_ls, LsBasis};
pub use mcm::{
    price_mcm, Calibration, CalibrationScope, DateReport, McmOptions, Method, SweepResult,
};
pub use payoff::{evaluate_payoff, Payoff, PayoffKind};
pub use tree::{geometric_equivalent, price_tree_1d, TreeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricerError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("method unavailable: {0}")]
    MethodUnavailable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Ratio(#[from] RatioError),
}

/// Per-path stopping index and the payoff collected there.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseState {
    pub tau: Vec<usize>,
    /// Undiscounted payoff at `tau`.
    pub cash: Vec<f64>,
}

impl ExerciseState {
    pub fn at_maturity(cash: Vec<f64>, steps: usize) -> Self {
        Self {
            tau: vec![steps; cash.len()],
            cash,
        }
    }

    pub fn exercise(&mut self, path: usize, date: usize, cash: f64) {
        debug_assert!(date <= self.tau[path]);
        self.tau[path] = date;
        self.cash[path] = cash;
    }

    /// Cash flows discounted to time zero with per-step factor `e^{-r dt}`.
    pub fn discounted(&self, rate: f64, dt: f64) -> Vec<f64> {
        self.tau
            .iter()
            .zip(&self.cash)
            .map(|(&t, &c)| c * (-rate * dt * t as f64).exp())
            .collect()
    }
}

/// Model and contract inputs shared by every replication.
#[derive(Debug, Clone)]
pub struct MarketSetup {
    pub vol: TriangularVol,
    pub grid: TimeGrid,
    pub s0: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Mcm(McmOptions),
    Ls(LsBasis),
}

impl Estimator {
    pub fn method(&self) -> Method {
        match self {
            Estimator::Mcm(o) => o.method,
            Estimator::Ls(_) => Method::Ls,
        }
    }
}

/// Mean and spread of a price over independent replications.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceEstimate {
    pub price: f64,
    /// Sample standard deviation over replications; 0 for a single replication.
    pub std_dev: f64,
    pub values: Vec<f64>,
    pub european: Vec<f64>,
    pub fallbacks: usize,
    pub runtime: Duration,
}

impl PriceEstimate {
    pub fn from_values(
        values: Vec<f64>,
        european: Vec<f64>,
        fallbacks: usize,
        runtime: Duration,
    ) -> Self {
        let n = values.len() as f64;
        let price = values.iter().sum::<f64>() / n;
        let std_dev = if values.len() >= 2 {
            (values.iter().map(|v| (v - price).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            price,
            std_dev,
            values,
            european,
            fallbacks,
            runtime,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `i`: `seed XOR splitmix64(i)`.
pub fn replication_seed(seed: u64, i: usize) -> u64 {
    seed ^ splitmix64(i as u64)
}

/// Runs `replications` independent sweeps and aggregates them.
pub fn price_replicated(
    setup: &MarketSetup,
    payoff: &Payoff,
    estimator: &Estimator,
    n_paths: usize,
    replications: usize,
    seed: u64,
) -> Result<PriceEstimate, PricerError> {
    if replications == 0 {
        return Err(PricerError::InvalidArgument(
            "replications must be at least 1".into(),
        ));
    }
    let start = Instant::now();
    let mut values = Vec::with_capacity(replications);
    let mut european = Vec::with_capacity(replications);
    let mut fallbacks = 0;
    for i in 0..replications {
        let paths = simulate_paths(
            &setup.vol,
            &setup.grid,
            &setup.s0,
            setup.rate,
            n_paths,
            replication_seed(seed, i),
        )?;
        let res = match estimator {
            Estimator::Mcm(opts) => price_mcm(&paths, payoff, opts)?,
            Estimator::Ls(basis) => price_ls(&paths, payoff, *basis)?,
        };
        values.push(res.price);
        european.push(res.european);
        fallbacks += res.fallbacks;
    }
    Ok(PriceEstimate::from_values(
        values,
        european,
        fallbacks,
        start.elapsed(),
    ))
}
