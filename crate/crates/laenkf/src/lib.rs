//! File formats, configuration, experiment pipeline and reporting for the
//! LAE-EnKF. The numerics live in [`laenkf_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod report;
pub mod tensor;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use error::{Error, Result};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "LAENKF_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`]; without it rayon's
/// default (one thread per core) applies. Results never depend on the
/// thread count.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
