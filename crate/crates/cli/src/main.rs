use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ctia_ipc_sim::run::{EXIT_OK, EXIT_VALIDATION};
use ctia_ipc_sim::{configure_threads, run, Invocation, Mode};

/// Behavioral simulator for a CTIA in-pixel convolution accelerator.
#[derive(Debug, Parser)]
#[command(name = "ctia-ipc-sim", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else ./ctia-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return exit(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return exit(EXIT_VALIDATION);
    }
    let inv = Invocation {
        mode: cli.mode,
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match run(&inv) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", summary.message);
            for a in &summary.artifacts {
                let _ = writeln!(out, "wrote {}", a.display());
            }
            exit(summary.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.exit_code())
        }
    }
}
