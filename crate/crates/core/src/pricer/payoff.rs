use serde::{Deserialize, Serialize};

use super::PricerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    /// `(K - (prod S_i)^(1/d))_+`
    GeometricPut,
    /// `(K - min(S_1, S_2))_+`
    MinPut,
    /// `(max(S_1, S_2) - K)_+`
    MaxCall,
}

impl PayoffKind {
    pub fn name(&self) -> &'static str {
        match self {
            PayoffKind::GeometricPut => "geometric_put",
            PayoffKind::MinPut => "min_put",
            PayoffKind::MaxCall => "max_call",
        }
    }
}

impl std::fmt::Display for PayoffKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PayoffKind {
    type Err = PricerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric_put" => Ok(PayoffKind::GeometricPut),
            "min_put" => Ok(PayoffKind::MinPut),
            "max_call" => Ok(PayoffKind::MaxCall),
            other => Err(PricerError::InvalidArgument(format!(
                "unknown payoff '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoff {
    kind: PayoffKind,
    strike: f64,
    dim: usize,
}

impl Payoff {
    pub fn new(kind: PayoffKind, strike: f64, dim: usize) -> Result<Self, PricerError> {
        if !(strike.is_finite() && strike >= 0.0) {
            return Err(PricerError::InvalidArgument(format!(
                "strike must be non-negative, got {strike}"
            )));
        }
        if dim == 0 {
            return Err(PricerError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if matches!(kind, PayoffKind::MinPut | PayoffKind::MaxCall) && dim != 2 {
            return Err(PricerError::DimensionMismatch {
                expected: 2,
                got: dim,
            });
        }
        Ok(Self { kind, strike, dim })
    }

    pub fn geometric_put(strike: f64, dim: usize) -> Result<Self, PricerError> {
        Self::new(PayoffKind::GeometricPut, strike, dim)
    }

    pub fn kind(&self) -> PayoffKind {
        self.kind
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Payoff of an asset vector whose length is already known to match.
    #[inline]
    pub fn value(&self, s: &[f64]) -> f64 {
        let k = self.strike;
        match self.kind {
            PayoffKind::GeometricPut => {
                let g = if s.len() == 1 {
                    s[0]
                } else {
                    (s.iter().map(|v| v.ln()).sum::<f64>() / s.len() as f64).exp()
                };
                (k - g).max(0.0)
            }
            PayoffKind::MinPut => (k - s[0].min(s[1])).max(0.0),
            PayoffKind::MaxCall => (s[0].max(s[1]) - k).max(0.0),
        }
    }
}

pub fn evaluate_payoff(payoff: &Payoff, s: &[f64]) -> Result<f64, PricerError> {
    if s.len() != payoff.dim {
        return Err(PricerError::DimensionMismatch {
            expected: payoff.dim,
            got: s.len(),
        });
    }
    Ok(payoff.value(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_values() {
        let g = Payoff::geometric_put(100.0, 2).unwrap();
        assert!(evaluate_payoff(&g, &[100.0, 100.0]).unwrap().abs() < 1e-12);
        let m = Payoff::new(PayoffKind::MinPut, 100.0, 2).unwrap();
        assert_eq!(evaluate_payoff(&m, &[90.0, 120.0]).unwrap(), 10.0);
        let c = Payoff::new(PayoffKind::MaxCall, 100.0, 2).unwrap();
        assert_eq!(evaluate_payoff(&c, &[90.0, 120.0]).unwrap(), 20.0);
        let v = Payoff::geometric_put(100.0, 1).unwrap();
        assert_eq!(v.value(&[93.25]), 100.0 - 93.25);
    }

    #[test]
    fn two_asset_payoffs_need_two_assets() {
        assert!(matches!(
            Payoff::new(PayoffKind::MinPut, 100.0, 5),
            Err(PricerError::DimensionMismatch {
                expected: 2,
                got: 5
            })
        ));
        let g = Payoff::geometric_put(100.0, 3).unwrap();
        assert!(evaluate_payoff(&g, &[1.0, 2.0]).is_err());
    }
}
