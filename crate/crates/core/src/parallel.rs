//! Worker-count control for data-parallel loops.
//!
//! Every parallel loop in the crate collects its results in index order, so
//! outputs do not depend on the number of workers.

use crate::error::{Error, Result};

/// Runs `f` inside a thread pool with `workers` threads; `0` uses the global
/// pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start {workers} worker threads: {e}")))?;
    Ok(pool.install(f))
}
