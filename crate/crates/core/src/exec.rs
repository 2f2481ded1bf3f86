//! Execution strategy for embarrassingly parallel replicate loops.
//!
//! Results are always returned in index order, so anything reduced from them
//! sequentially is independent of the worker count.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Global rayon pool.
    #[default]
    Parallel,
    /// Dedicated pool with this many threads.
    Workers(usize),
}

impl Execution {
    /// `Some(1)` maps to sequential, `None` to the default pool.
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(0) | None => Execution::Parallel,
            Some(1) => Execution::Sequential,
            Some(k) => Execution::Workers(k),
        }
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => Ok((0..n).map(f).collect()),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                Ok((0..n).into_par_iter().map(f).collect())
            }
            #[cfg(feature = "parallel")]
            Execution::Workers(k) => {
                use rayon::prelude::*;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::input(format!("cannot start {k} workers: {e}")))?;
                Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
            }
            #[cfg(not(feature = "parallel"))]
            Execution::Parallel | Execution::Workers(_) => Ok((0..n).map(f).collect()),
        }
    }
}
