//! Data-parallel helpers. With the `parallel` feature, work is spread over a
//! rayon pool of the requested size; otherwise (or with one worker) it runs in
//! order on the calling thread. Either way the chunking is fixed by the
//! caller, so results never depend on the worker count.

use crate::error::{Error, Result};

/// Applies `f` to consecutive chunks of `items` and returns the results in
/// chunk order.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> Result<R> + Sync + Send,
{
    if chunk == 0 {
        return Err(Error::arg("chunk size must be positive"));
    }
    if workers == 0 {
        return Err(Error::arg("workers must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > chunk {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
        return pool.install(|| {
            items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect()
        });
    }
    items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Number of hardware threads, at least 1.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
