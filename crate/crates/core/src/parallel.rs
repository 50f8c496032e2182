//! Data-parallel map with a sequential fallback.
//!
//! All per-sample work in this crate is phrased as "map index -> value,
//! collect into a Vec in index order, reduce sequentially". Reductions never
//! happen inside the parallel region, so a build with the `parallel` feature
//! produces bit-identical floating point results to one without it.

/// Applies `f` to `0..n` and collects the results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Applies `f` to `0..n` and collects the results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
