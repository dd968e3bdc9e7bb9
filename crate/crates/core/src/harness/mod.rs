//! Experiment orchestration: declarative configs, seeded `(algo, seed)`
//! cells, baselines, diagnostics and CSV/JSON emission.

pub mod config;
pub mod csv;
pub mod diagnostics;
pub mod run;

pub use config::{Algo, Family, RunConfig};
pub use run::{build_env, run_cell, run_experiment, BuiltEnv, CellOutput, EnvClass, ExperimentSummary};

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> crate::Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| crate::Error::InvalidParam(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
