//! Run configuration: JSON document plus validation into pricer inputs.

use std::path::{Path, PathBuf};

use mcm_core::market::{build_vol, TimeGrid, VolSpec};
use mcm_core::pricer::{
    Calibration, CalibrationScope, Estimator, LsBasis, MarketSetup, McmOptions, Method, Payoff,
    PayoffKind,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted `log2_paths`; the pair engine is quadratic in the path count.
pub const MAX_LOG2_PATHS: u32 = 24;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}, field `{field}`: {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{payoff} needs dimension {expected}, got {got}")]
    DimensionMismatch {
        payoff: PayoffKind,
        expected: usize,
        got: usize,
    },
    #[error("axes: {0}")]
    Axes(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(ConfigError::Invalid {
                field: "output.format",
                reason: format!("unknown format '{other}'"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

/// One pricing experiment. Missing fields take the benchmark defaults:
/// `K = 100`, `T = 1`, `r = ln 1.1`, `S_0 = 100` and diagonal volatility 0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub payoff: PayoffKind,
    pub dim: usize,
    pub strike: f64,
    pub spot: f64,
    pub maturity: f64,
    pub rate: f64,
    pub vol: VolSpec,
    pub steps: usize,
    pub log2_paths: u32,
    pub method: Method,
    pub conditioning: bool,
    pub calibration: Calibration,
    pub scope: CalibrationScope,
    pub leave_one_out: bool,
    pub ls_basis: LsBasis,
    pub replications: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub output: Option<OutputConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            payoff: PayoffKind::GeometricPut,
            dim: 1,
            strike: 100.0,
            spot: 100.0,
            maturity: 1.0,
            rate: 1.1f64.ln(),
            vol: VolSpec::diagonal(0.2),
            steps: 10,
            log2_paths: 14,
            method: Method::P2Opt,
            conditioning: true,
            calibration: Calibration::M1,
            scope: CalibrationScope::Pooled,
            leave_one_out: false,
            ls_basis: LsBasis::Auto,
            replications: 16,
            seed: 2024,
            threads: None,
            output: None,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

/// `closed`, `M1` or `M2:<eps>`.
pub fn parse_calibration(s: &str) -> Result<Calibration, ConfigError> {
    match s {
        "closed" | "Closed" => Ok(Calibration::Closed),
        "M1" | "m1" => Ok(Calibration::M1),
        _ => {
            let eps = s
                .strip_prefix("M2:")
                .or_else(|| s.strip_prefix("m2:"))
                .ok_or_else(|| invalid("calibration", format!("unknown calibration '{s}'")))?;
            let eps: f64 = eps
                .parse()
                .map_err(|e| invalid("calibration", format!("bad tolerance '{eps}': {e}")))?;
            Ok(Calibration::M2 { eps })
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                field,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn n_paths(&self) -> usize {
        1usize << self.log2_paths
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        positive("strike", self.strike)?;
        positive("spot", self.spot)?;
        positive("maturity", self.maturity)?;
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(invalid(
                "rate",
                format!("must be non-negative and finite, got {}", self.rate),
            ));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if !(1..=MAX_LOG2_PATHS).contains(&self.log2_paths) {
            return Err(invalid(
                "log2_paths",
                format!("must lie in 1..={MAX_LOG2_PATHS}, got {}", self.log2_paths),
            ));
        }
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        if let Calibration::M2 { eps } = self.calibration {
            positive("calibration.eps", eps)?;
        }
        self.payoff()?;
        let market = self.market()?;
        for piece in 0..market.vol.n_pieces() {
            let sigma = market.vol.sigma(piece);
            if (0..self.dim).any(|i| sigma[(i, i)] <= 0.0) {
                return Err(invalid("vol", "diagonal volatilities must be positive"));
            }
        }
        if self.method == Method::P1 && market.vol.constant_diagonal().is_none() {
            return Err(invalid(
                "method",
                "P1 needs a closed-form denominator, i.e. constant diagonal volatility",
            ));
        }
        Ok(())
    }

    pub fn payoff(&self) -> Result<Payoff, ConfigError> {
        let needs_two = matches!(self.payoff, PayoffKind::MinPut | PayoffKind::MaxCall);
        if needs_two && self.dim != 2 {
            return Err(ConfigError::DimensionMismatch {
                payoff: self.payoff,
                expected: 2,
                got: self.dim,
            });
        }
        Payoff::new(self.payoff, self.strike, self.dim)
            .map_err(|e| invalid("payoff", e.to_string()))
    }

    pub fn market(&self) -> Result<MarketSetup, ConfigError> {
        let vol = build_vol(self.dim, &self.vol).map_err(|e| invalid("vol", e.to_string()))?;
        let grid = TimeGrid::new(self.maturity, self.steps)
            .map_err(|e| invalid("steps", e.to_string()))?;
        Ok(MarketSetup {
            vol,
            grid,
            s0: vec![self.spot; self.dim],
            rate: self.rate,
        })
    }

    pub fn estimator(&self) -> Estimator {
        match self.method {
            Method::Ls => Estimator::Ls(self.ls_basis),
            m => Estimator::Mcm(McmOptions {
                method: m,
                conditioning: self.conditioning,
                calibration: self.calibration,
                scope: self.scope,
                leave_one_out: self.leave_one_out,
            }),
        }
    }
}
