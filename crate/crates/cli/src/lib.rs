//! Configuration, orchestration and reporting for the billiard extreme value
//! experiments. The `billiard-evt` binary is a thin layer over this crate.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod selftest;

pub use config::{ConfigInvalid, ExperimentConfig};

/// Worker count requested through `BILLIARD_EVT_THREADS`, if any.
pub fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("BILLIARD_EVT_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("BILLIARD_EVT_THREADS={v:?} is not a count"))?;
            anyhow::ensure!(n > 0, "BILLIARD_EVT_THREADS must be positive");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}
