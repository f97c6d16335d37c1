use std::time::Instant;

use hpsf_core::pipeline::Executor;
use rayon::prelude::*;

/// Executor backed by a rayon pool. With one thread, work runs on the
/// calling thread in input order.
pub struct Pool {
    pool: Option<rayon::ThreadPool>,
    start: Instant,
}

impl Pool {
    /// `threads == 0` uses rayon's default size.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = if threads == 1 {
            None
        } else {
            Some(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
        };
        Ok(Self {
            pool,
            start: Instant::now(),
        })
    }

    pub fn sequential() -> Self {
        Self {
            pool: None,
            start: Instant::now(),
        }
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }
}

impl Executor for Pool {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter().map(f).collect(),
            Some(p) => p.install(|| items.par_iter().map(f).collect()),
        }
    }

    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
