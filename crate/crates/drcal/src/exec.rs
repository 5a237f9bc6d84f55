use drcal_core::SampleMap;
use rayon::prelude::*;

/// Runs per-sample work on the current rayon pool. Results come back in
/// index order and are reduced sequentially by the caller, so runs are
/// bit-identical to [`drcal_core::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl SampleMap for Parallel {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).into_par_iter().map(|i| f(i)).collect()
    }
}

/// A pool with `jobs` threads, or rayon's default when `jobs` is 0.
pub fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool")
}
