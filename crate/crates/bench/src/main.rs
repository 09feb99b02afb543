use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcm_bench::{
    parse_calibration, run, scaling_csv, scaling_report, sweep, Axes, ConfigError, OutputConfig,
    OutputFormat, PriceTable, RowStatus, RunConfig, RunError,
};
use mcm_core::pricer::{Method, PayoffKind};

#[derive(Parser)]
#[command(
    name = "mcm-bench",
    version,
    about = "Price American options with the MCM estimator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price one configuration.
    Price(Common),
    /// Price the cartesian product of the given axes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// e.g. "dim=1,5,10;steps=10,20,30;method=P1,P2opt"
        #[arg(long, conflicts_with = "preset")]
        axes: Option<String>,
        #[arg(long, value_parser = ["table1", "table2"])]
        preset: Option<String>,
    },
    /// Rerun at several thread counts and report speedups.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        degrees: Vec<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    payoff: Option<PayoffKind>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    log2_paths: Option<u32>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// closed, M1 or M2:<eps>
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long)]
    no_conditioning: bool,
    #[arg(long, env = "MCM_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.payoff {
            cfg.payoff = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.log2_paths {
            cfg.log2_paths = v;
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(c) = &self.calibration {
            cfg.calibration = parse_calibration(c)?;
        }
        if self.no_conditioning {
            cfg.conditioning = false;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(path) = &self.out {
            let format = self
                .format
                .or(cfg.output.as_ref().map(|o| o.format))
                .unwrap_or_else(|| guess_format(path));
            cfg.output = Some(OutputConfig {
                path: path.clone(),
                format,
            });
        } else if let (Some(f), Some(o)) = (self.format, cfg.output.as_mut()) {
            o.format = f;
        }
        Ok(cfg)
    }
}

fn guess_format(path: &std::path::Path) -> OutputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => OutputFormat::Json,
        _ => OutputFormat::Csv,
    }
}

fn emit(table: &PriceTable, cfg: &RunConfig, format: Option<OutputFormat>) -> Result<(), RunError> {
    for row in &table.rows {
        match row.status {
            RowStatus::SingleReplication => eprintln!(
                "warning: {} {} d={} ran a single replication; std is not estimated",
                row.method, row.payoff, row.dim
            ),
            RowStatus::Failed => eprintln!(
                "warning: {} {} d={} steps={} failed: {}",
                row.method,
                row.payoff,
                row.dim,
                row.steps,
                row.error.as_deref().unwrap_or("")
            ),
            RowStatus::Ok => {}
        }
    }
    match &cfg.output {
        Some(o) => table.write(&o.path, o.format)?,
        None => print!("{}", table.render(format.unwrap_or_default())?),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Price(common) => {
            let cfg = common.resolve()?;
            let table = run(&cfg)?;
            emit(&table, &cfg, common.format)
        }
        Command::Sweep {
            common,
            axes,
            preset,
        } => {
            let cfg = common.resolve()?;
            let axes = match (axes, preset.as_deref()) {
                (Some(s), _) => Axes::parse(&s)?,
                (None, Some("table1")) => Axes::table1(),
                (None, Some("table2")) => Axes::table2(),
                _ => Axes::default(),
            };
            let table = sweep(&cfg, &axes);
            emit(&table, &cfg, common.format)?;
            if !table.is_empty() && table.rows.iter().all(|r| r.status == RowStatus::Failed) {
                return Err(RunError::Pricer(
                    mcm_core::pricer::PricerError::InvalidArgument(
                        "every sweep cell failed".into(),
                    ),
                ));
            }
            Ok(())
        }
        Command::Scaling { common, degrees } => {
            let cfg = common.resolve()?;
            let rows = scaling_report(&cfg, &degrees)?;
            let text = scaling_csv(&rows)?;
            match &cfg.output {
                Some(o) => std::fs::write(&o.path, text).map_err(mcm_bench::TableError::from)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
