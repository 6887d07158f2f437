// NaN must fail comparisons, so `!(x > 0.0)` style checks are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use clap::error::ErrorKind;
use clap::Parser;

use config::{Cli, Command};

/// Thread-count override for the per-point sweeps.
const THREADS_ENV: &str = "RESTENT_THREADS";

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("configuration error: {msg}");
        std::process::exit(1);
    }
    let outcome = match &cli.command {
        Command::Bound(a) => run::cmd_bound(a),
        Command::Sweep(a) => run::cmd_sweep(a),
        Command::Oracle(a) => run::cmd_oracle(a),
        Command::Lanford(a) => run::cmd_lanford(a),
        Command::Props(a) => run::cmd_props(a),
    };
    if let Err(f) = outcome {
        eprintln!("{}", f.message());
        std::process::exit(f.exit_code());
    }
}
