//! Trial scheduling. Results always come back in trial order, so any
//! reduction over them is independent of the worker count.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Runs on a dedicated pool of `workers` threads. Without the `parallel`
    /// feature this degrades to sequential execution.
    Parallel { workers: usize },
}

impl Execution {
    pub fn with_workers(workers: usize) -> Result<Self> {
        match workers {
            0 => Err(Error::config("workers", "must be at least 1")),
            1 => Ok(Execution::Sequential),
            w => Ok(Execution::Parallel { workers: w }),
        }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        let w = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Execution::with_workers(w).unwrap_or(Execution::Sequential)
    }

    pub fn workers(&self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Parallel { workers } => *workers,
        }
    }
}

impl Default for Execution {
    fn default() -> Self {
        Execution::available()
    }
}

/// Evaluates `f(0), ..., f(trials - 1)` and returns the values in index order.
pub fn map_trials<T, F>(exec: Execution, trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..trials).map(f).collect(),
        Execution::Parallel { workers } => parallel_map(workers, trials, f),
    }
}

/// Like [`map_trials`] but stops at the lowest-index error.
pub fn try_map_trials<T, F>(exec: Execution, trials: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    map_trials(exec, trials, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(workers: usize, trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..trials).into_par_iter().map(&f).collect()),
        // Thread creation can fail under tight limits; the answer is the same either way.
        Err(_) => (0..trials).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(_workers: usize, trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..trials).map(f).collect()
}
