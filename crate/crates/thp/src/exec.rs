use rayon::prelude::*;
use thp_core::train::BatchExecutor;

/// Runs per-sequence jobs on the rayon pool; results keep index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl BatchExecutor for Rayon {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).into_par_iter().map(job).collect()
    }
}
