use rayon::prelude::*;

use crate::error::Result;

/// Runs `job(i)` for `i in 0..n` on the rayon pool and returns the results in
/// index order. If several jobs fail, the error of the lowest index is returned,
/// so failures are reproducible regardless of scheduling.
pub fn map_paths<T, F>(n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(job).collect();
    results.into_iter().collect()
}
