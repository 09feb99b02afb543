//! Sweep axes: `key=v1,v2;key=v1,...`.

use std::fmt;

use mcm_core::pricer::{Method, PayoffKind};

use crate::config::{ConfigError, RunConfig};

/// Values swept over; an unset axis keeps the template's value.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Axes {
    pub payoff: Option<Vec<PayoffKind>>,
    pub log2_paths: Option<Vec<u32>>,
    pub dim: Option<Vec<usize>>,
    pub steps: Option<Vec<usize>>,
    pub method: Option<Vec<Method>>,
}

fn axes_err(msg: impl Into<String>) -> ConfigError {
    ConfigError::Axes(msg.into())
}

fn values<T>(key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T: std::str::FromStr,
    T::Err: fmt::Display,
{
    raw.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<T>()
                .map_err(|e| axes_err(format!("{key}: bad value '{v}': {e}")))
        })
        .collect()
}

fn set<T>(slot: &mut Option<Vec<T>>, key: &str, v: Vec<T>) -> Result<(), ConfigError> {
    if slot.is_some() {
        return Err(axes_err(format!("axis '{key}' given twice")));
    }
    *slot = Some(v);
    Ok(())
}

impl Axes {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let mut axes = Axes::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, raw) = part
                .split_once('=')
                .ok_or_else(|| axes_err(format!("expected key=values, got '{part}'")))?;
            let key = key.trim();
            match key {
                "payoff" => set(&mut axes.payoff, key, values(key, raw)?)?,
                "log2_paths" | "paths" => set(&mut axes.log2_paths, key, values(key, raw)?)?,
                "dim" | "d" => set(&mut axes.dim, key, values(key, raw)?)?,
                "steps" => set(&mut axes.steps, key, values(key, raw)?)?,
                "method" => set(&mut axes.method, key, values(key, raw)?)?,
                other => return Err(axes_err(format!("unknown axis '{other}'"))),
            }
        }
        Ok(axes)
    }

    /// Price grid of the geometric put benchmark: 54 cells.
    pub fn table1() -> Self {
        Self::parse("log2_paths=10,14;dim=1,5,10;steps=10,20,30;method=P1,P2eq,P2opt")
            .expect("preset parses")
    }

    /// Grid of one two-asset payoff: 12 cells.
    pub fn table2() -> Self {
        Self::parse("log2_paths=10,14;steps=10,20,30;method=P1,P2opt").expect("preset parses")
    }

    pub fn is_empty(&self) -> bool {
        self.payoff.is_none()
            && self.log2_paths.is_none()
            && self.dim.is_none()
            && self.steps.is_none()
            && self.method.is_none()
    }

    pub fn cardinality(&self) -> usize {
        fn n<T>(v: &Option<Vec<T>>) -> usize {
            v.as_ref().map_or(1, Vec::len)
        }
        n(&self.payoff) * n(&self.log2_paths) * n(&self.dim) * n(&self.steps) * n(&self.method)
    }

    /// Cartesian product applied to `template`, with `method` varying fastest.
    pub fn expand(&self, template: &RunConfig) -> Vec<RunConfig> {
        fn or<T: Clone>(axis: &Option<Vec<T>>, current: T) -> Vec<T> {
            axis.clone().unwrap_or_else(|| vec![current])
        }
        let mut out = Vec::with_capacity(self.cardinality());
        for payoff in or(&self.payoff, template.payoff) {
            for log2_paths in or(&self.log2_paths, template.log2_paths) {
                for dim in or(&self.dim, template.dim) {
                    for steps in or(&self.steps, template.steps) {
                        for method in or(&self.method, template.method) {
                            out.push(RunConfig {
                                payoff,
                                log2_paths,
                                dim,
                                steps,
                                method,
                                ..template.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Axes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn part<T: fmt::Display>(key: &str, v: &Option<Vec<T>>, out: &mut Vec<String>) {
            if let Some(v) = v {
                let vals: Vec<String> = v.iter().map(ToString::to_string).collect();
                out.push(format!("{key}={}", vals.join(",")));
            }
        }
        let mut parts = Vec::new();
        part("payoff", &self.payoff, &mut parts);
        part("log2_paths", &self.log2_paths, &mut parts);
        part("dim", &self.dim, &mut parts);
        part("steps", &self.steps, &mut parts);
        part("method", &self.method, &mut parts);
        f.write_str(&parts.join(";"))
    }
}
