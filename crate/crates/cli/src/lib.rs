//! Command-line front end: run configuration, mode dispatch and artifact
//! files.

pub mod config;
pub mod run;

pub use config::{Mode, RunConfig};
pub use run::{run, CliError, Invocation, RunSummary};

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "CTIA_IPC_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`].
pub fn configure_threads() -> Result<(), String> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a nonnegative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
