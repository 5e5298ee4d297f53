//! Batch front end for the expansion engine: JSON run configurations in,
//! JSON reports, CSV decay tables and binary field dumps out.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

use config::Mode;

#[derive(Debug, Parser)]
#[command(name = "fg-expand", version, about = "Truncated expansions of asymptotically de Sitter vacuum metrics")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the mode in the configuration.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplies every tolerance.
    #[arg(long)]
    pub tol_scale: Option<f64>,
    /// Seed for randomized boundary data.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit code for output failures.
pub const EXIT_IO: u8 = 1;

/// Parses, runs and writes outputs. Returns the process exit code.
pub fn main_with(args: &Args) -> u8 {
    let mut cfg = match config::parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return run::Status::ConfigError.exit_code();
        }
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(k) = args.tol_scale {
        cfg.tolerances = cfg.tolerances.scaled(k);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{e}");
        return run::Status::ConfigError.exit_code();
    }
    let exec = run::execute(&cfg);
    let dir = PathBuf::from(&cfg.output.dir);
    if let Err(e) = run::write_outputs(&exec, &dir, cfg.output.dump_fields) {
        eprintln!("cannot write outputs to {}: {e}", dir.display());
        return EXIT_IO;
    }
    let r = &exec.report;
    match &r.violation {
        None => println!("{:?}: ok ({})", r.mode, dir.join("report.json").display()),
        Some(v) => eprintln!("{:?}: {}", r.mode, v.message),
    }
    r.exit_code
}
