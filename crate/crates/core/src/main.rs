use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use lobflux::config::RunConfig;
use lobflux::pipeline::{self, Command, REPORT_SCHEMA_VERSION};
use lobflux::LobError;

#[derive(Parser)]
#[command(
    name = "lobflux",
    version,
    about = "Limit order book simulation, scaling limits and calibration"
)]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `section.key=value` override, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Monte Carlo ensemble of the discrete book.
    Simulate,
    /// Deterministic first-order limit.
    FirstOrder,
    /// Rescaled fluctuations and martingale diagnostics.
    Fluctuations {
        /// Directory written by `simulate`.
        #[arg(long)]
        paths: Option<PathBuf>,
        /// Directory written by `first-order`.
        #[arg(long)]
        first_order: Option<PathBuf>,
        /// Comma-separated test functions, e.g. `bump:-0.2:0.4,indicator:-1:0`.
        #[arg(long)]
        test_fns: Option<String>,
    },
    /// Gaussian second-order limit.
    SecondOrder {
        #[arg(long, value_parser = ["simplified", "spectral"])]
        mode: Option<String>,
        #[arg(long, value_parser = ["integral", "literal"])]
        covariance_exponent: Option<String>,
    },
    /// Regression estimates from snapshots or a simulated session.
    Calibrate,
    /// Windowed price/volume correlation against the model.
    Correlate,
    /// Checks across a ladder of tick sizes.
    ConvergenceStudy,
    /// Checks of the model assumptions.
    Validate,
}

fn quoted(v: &str) -> String {
    format!("\"{v}\"")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LOBFLUX_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let mut overrides = Vec::new();
    let cmd = match cli.command {
        Sub::Simulate => Command::Simulate,
        Sub::FirstOrder => Command::FirstOrder,
        Sub::Fluctuations {
            paths,
            first_order,
            test_fns,
        } => {
            if let Some(t) = test_fns {
                let list: Vec<String> = t.split(',').map(|s| quoted(s.trim())).collect();
                overrides.push(format!("fluctuations.test_fns=[{}]", list.join(",")));
            }
            Command::Fluctuations { paths, first_order }
        }
        Sub::SecondOrder {
            mode,
            covariance_exponent,
        } => {
            if let Some(m) = mode {
                overrides.push(format!("second_order.mode={}", quoted(&m)));
            }
            if let Some(e) = covariance_exponent {
                overrides.push(format!("second_order.covariance_exponent={}", quoted(&e)));
            }
            Command::SecondOrder
        }
        Sub::Calibrate => Command::Calibrate,
        Sub::Correlate => Command::Correlate,
        Sub::ConvergenceStudy => Command::ConvergenceStudy,
        Sub::Validate => Command::Validate,
    };
    // explicit flags win over --set
    let mut all = cli.set.clone();
    all.extend(overrides);
    let result = RunConfig::load(cli.config.as_deref(), &all).and_then(|cfg| {
        let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        pipeline::run(&cmd, &cfg, &out)
    });
    match result {
        Ok(outcome) if outcome.passed => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn error_json(e: &LobError) -> serde_json::Value {
    json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "error": { "kind": e.kind(), "message": e.to_string() },
    })
}
