//! Result rows, CSV/JSON serialization and a runtime-free fingerprint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::OutputFormat;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Only one replication ran, so `std` is reported as 0.
    SingleReplication,
    /// The cell failed; `price` and `std` are empty.
    Failed,
}

/// One priced configuration. Column order matches the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub method: String,
    pub payoff: String,
    pub dim: usize,
    pub steps: usize,
    pub paths: usize,
    pub price: Option<f64>,
    pub std: Option<f64>,
    pub fallbacks: usize,
    pub runtime_ms: f64,
    pub status: RowStatus,
    /// Error message of a failed cell.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub rows: Vec<PriceRow>,
}

impl PriceTable {
    pub fn new(rows: Vec<PriceRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), TableError> {
        let mut wtr = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            wtr.write_record(HEADER)?;
        }
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, TableError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<Result<Vec<PriceRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn from_csv_str(s: &str) -> Result<Self, TableError> {
        Self::read_csv(s.as_bytes())
    }

    pub fn to_json_string(&self) -> Result<String, TableError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TableError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn render(&self, format: OutputFormat) -> Result<String, TableError> {
        match format {
            OutputFormat::Csv => self.to_csv_string(),
            OutputFormat::Json => self.to_json_string().map(|s| s + "\n"),
        }
    }

    pub fn write(&self, path: &Path, format: OutputFormat) -> Result<(), TableError> {
        std::fs::write(path, self.render(format)?)?;
        Ok(())
    }

    pub fn read(path: &Path, format: OutputFormat) -> Result<Self, TableError> {
        let text = std::fs::read_to_string(path)?;
        match format {
            OutputFormat::Csv => Self::from_csv_str(&text),
            OutputFormat::Json => Self::from_json_str(&text),
        }
    }

    /// SHA-256 over the CSV rendering with `runtime_ms` zeroed.
    pub fn fingerprint(&self) -> String {
        let stripped = PriceTable {
            rows: self
                .rows
                .iter()
                .map(|r| PriceRow {
                    runtime_ms: 0.0,
                    ..r.clone()
                })
                .collect(),
        };
        let csv = stripped.to_csv_string().expect("in-memory csv");
        hex::encode(Sha256::digest(csv.as_bytes()))
    }
}

const HEADER: [&str; 11] = [
    "method",
    "payoff",
    "dim",
    "steps",
    "paths",
    "price",
    "std",
    "fallbacks",
    "runtime_ms",
    "status",
    "error",
];
