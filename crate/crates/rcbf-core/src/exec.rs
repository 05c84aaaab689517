//! Indexed map helpers for the data-parallel inner loops (grid
//! certification, sampled Lipschitz estimates, sweep execution).
//!
//! With the `parallel` feature (on by default) the map runs on the rayon
//! thread pool; without it the same call degrades to plain sequential
//! iteration. Results are ordered by index either way, so callers see
//! identical output regardless of the feature or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Send + Sync) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Send + Sync) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], available regardless of features.
/// The benches use it to compare both execution modes on one build.
pub fn map_indexed_seq<R>(n: usize, f: impl Fn(usize) -> R) -> Vec<R> {
    (0..n).map(f).collect()
}
