//! Experiment harness for the MCM American option pricer: JSON run
//! configurations, parameter sweeps, thread-scaling checks and result tables.

pub mod axes;
pub mod config;
pub mod run;
pub mod table;

pub use axes::Axes;
pub use config::{parse_calibration, ConfigError, OutputConfig, OutputFormat, RunConfig};
pub use run::{estimate, run, scaling_csv, scaling_report, sweep, RunError, ScalingRow};
pub use table::{PriceRow, PriceTable, RowStatus, TableError};
