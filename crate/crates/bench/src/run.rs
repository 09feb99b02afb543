//! Single runs, sweeps and thread-scaling reports.

use std::time::{Duration, Instant};

use mcm_core::pricer::{price_replicated, PriceEstimate, PricerError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axes::Axes;
use crate::config::{ConfigError, RunConfig};
use crate::table::{PriceRow, PriceTable, RowStatus, TableError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pricing failed: {0}")]
    Pricer(#[from] PricerError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("degree {degree} gave prices {got:?}, degree {reference_degree} gave {expected:?}")]
    NonDeterministicResult {
        reference_degree: usize,
        degree: usize,
        expected: Vec<f64>,
        got: Vec<f64>,
    },
    #[error(transparent)]
    Table(#[from] TableError),
}

impl RunError {
    /// Process exit status: 1 for configuration problems, 2 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Pricer(PricerError::DimensionMismatch { .. })
            | RunError::Pricer(PricerError::MethodUnavailable(_))
            | RunError::Pricer(PricerError::InvalidArgument(_)) => 1,
            _ => 2,
        }
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Prices one configuration and returns the raw estimate.
pub fn estimate(config: &RunConfig) -> Result<PriceEstimate, RunError> {
    config.validate()?;
    let setup = config.market()?;
    let payoff = config.payoff()?;
    let estimator = config.estimator();
    let n = config.n_paths();
    let res = in_pool(config.threads, || {
        price_replicated(
            &setup,
            &payoff,
            &estimator,
            n,
            config.replications,
            config.seed,
        )
    })??;
    Ok(res)
}

fn ok_row(config: &RunConfig, est: &PriceEstimate) -> PriceRow {
    PriceRow {
        method: config.method.to_string(),
        payoff: config.payoff.to_string(),
        dim: config.dim,
        steps: config.steps,
        paths: config.n_paths(),
        price: Some(est.price),
        std: Some(est.std_dev),
        fallbacks: est.fallbacks,
        runtime_ms: est.runtime.as_secs_f64() * 1e3,
        status: if config.replications == 1 {
            RowStatus::SingleReplication
        } else {
            RowStatus::Ok
        },
        error: None,
    }
}

fn failed_row(config: &RunConfig, err: &RunError, runtime: Duration) -> PriceRow {
    PriceRow {
        method: config.method.to_string(),
        payoff: config.payoff.to_string(),
        dim: config.dim,
        steps: config.steps,
        paths: 1usize.checked_shl(config.log2_paths).unwrap_or(0),
        price: None,
        std: None,
        fallbacks: 0,
        runtime_ms: runtime.as_secs_f64() * 1e3,
        status: RowStatus::Failed,
        error: Some(err.to_string()),
    }
}

/// One row for `config`. A single replication is flagged in the row status.
pub fn run(config: &RunConfig) -> Result<PriceTable, RunError> {
    let est = estimate(config)?;
    Ok(PriceTable::new(vec![ok_row(config, &est)]))
}

/// Runs every cell of `axes` applied to `template`; failing cells are
/// recorded with status `failed` and the sweep moves on.
pub fn sweep(template: &RunConfig, axes: &Axes) -> PriceTable {
    let rows = axes
        .expand(template)
        .iter()
        .map(|cfg| {
            let start = Instant::now();
            match estimate(cfg) {
                Ok(est) => ok_row(cfg, &est),
                Err(e) => failed_row(cfg, &e, start.elapsed()),
            }
        })
        .collect();
    PriceTable::new(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub degree: usize,
    pub runtime_ms: f64,
    /// Runtime at the first degree divided by runtime at this one.
    pub speedup: f64,
    pub price: f64,
}

/// Reprices `config` at each parallelism degree and checks the replication
/// values agree bit for bit.
pub fn scaling_report(config: &RunConfig, degrees: &[usize]) -> Result<Vec<ScalingRow>, RunError> {
    if degrees.is_empty() || degrees.contains(&0) {
        return Err(ConfigError::Invalid {
            field: "degrees",
            reason: "need at least one degree, each at least 1".into(),
        }
        .into());
    }
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(degrees.len());
    let mut reference: Option<Vec<f64>> = None;
    for &degree in degrees {
        let cfg = RunConfig {
            threads: Some(degree),
            ..config.clone()
        };
        let start = Instant::now();
        let est = estimate(&cfg)?;
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        match &reference {
            None => reference = Some(est.values.clone()),
            Some(expected) => {
                let same = expected.len() == est.values.len()
                    && expected
                        .iter()
                        .zip(&est.values)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(RunError::NonDeterministicResult {
                        reference_degree: degrees[0],
                        degree,
                        expected: expected.clone(),
                        got: est.values,
                    });
                }
            }
        }
        let base = rows.first().map_or(runtime_ms, |r| r.runtime_ms);
        rows.push(ScalingRow {
            degree,
            runtime_ms,
            speedup: base / runtime_ms,
            price: est.price,
        });
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> Result<String, TableError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| TableError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
