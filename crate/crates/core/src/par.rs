//! Order-preserving batch execution.
//!
//! Every data-parallel loop in the crate goes through [`Executor`]. With the
//! `parallel` feature enabled (the default) work is spread over a rayon pool;
//! without it, or with a single worker, the same closures run sequentially.
//! Results are always gathered in input order so downstream reductions see
//! identical inputs regardless of worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::Arc;

/// Fixed chunk length used by [`Executor::map_chunks`]. Reductions are
/// performed per chunk and then combined in order, so the chunking must not
/// depend on the number of workers.
pub const REDUCE_CHUNK: usize = 64;

#[derive(Clone, Default)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers())
            .finish()
    }
}

impl Executor {
    /// Single-threaded execution.
    pub fn sequential() -> Self {
        Self::default()
    }

    /// Executor with `workers` threads; `0` means "all available cores".
    /// Falls back to sequential execution when the `parallel` feature is off
    /// or `workers == 1`.
    pub fn new(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if workers == 1 {
                return Self::sequential();
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("failed to build worker pool");
            Self {
                pool: Some(Arc::new(pool)),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Self::sequential()
        }
    }

    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    pub fn is_parallel(&self) -> bool {
        self.workers() > 1
    }

    /// `f(i)` for `i in 0..n`, in order.
    pub fn map_range<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Apply `f` to consecutive chunks of `n` items (`REDUCE_CHUNK` each, the
    /// last possibly shorter) and return per-chunk results in order.
    pub fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        self.map_range(chunks, |c| {
            let start = c * REDUCE_CHUNK;
            f(start..(start + REDUCE_CHUNK).min(n))
        })
    }
}
