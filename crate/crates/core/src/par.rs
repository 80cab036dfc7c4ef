//! Execution helpers for data-parallel batch work.
//!
//! With the `parallel` feature (default) [`map_indexed`] fans out over the
//! rayon pool; without it the same call degrades to a plain loop. The
//! sequential path is always available as [`map_indexed_seq`] so benchmarks
//! can compare both on identical workloads.
//!
//! Every batch in this crate is a map over independent items collected in
//! input order, so results are bit-identical between the two paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f(index, item)` over a slice, preserving input order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Map `f(index, item)` over a slice, preserving input order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    map_indexed_seq(items, f)
}

/// Sequential reference path for [`map_indexed`].
pub fn map_indexed_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Map `f(i)` over `0..count`, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Map `f(i)` over `0..count`, preserving index order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_range_seq(count, f)
}

/// Sequential reference path for [`map_range`].
pub fn map_range_seq<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

/// Cap the global thread pool. A no-op when `jobs` is 0 (library default)
/// or when the pool was already initialized.
#[cfg(feature = "parallel")]
pub fn configure_threads(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_jobs: usize) {}
