//! Bounded data parallelism.
//!
//! Parallel maps produce results in index order, so outputs never depend on
//! the worker count.

use rayon::prelude::*;

/// A fixed-size worker pool. One worker means plain serial iteration.
pub struct Workers {
    count: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(count: usize) -> Self {
        let count = count.max(1);
        let pool = if count > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(count)
                .build()
                .ok()
        } else {
            None
        };
        Self { count, pool }
    }

    pub fn serial() -> Self {
        Self::new(1)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match &self.pool {
            Some(pool) if len > 1 => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
            _ => (0..len).map(f).collect(),
        }
    }

    /// Calls `f(chunk_index, chunk)` for every `chunk`-sized piece of `data`.
    pub fn for_each_chunk_mut<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        let chunk = chunk.max(1);
        match &self.pool {
            Some(pool) => pool.install(|| {
                data.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c))
            }),
            None => data
                .chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
        }
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::serial()
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers")
            .field("count", &self.count)
            .finish()
    }
}
