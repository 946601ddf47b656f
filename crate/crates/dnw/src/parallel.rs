//! Order-preserving map over independent work items, parallel when the
//! `parallel` feature is enabled and sequential otherwise.
//!
//! Each item is computed from its index alone and results are collected in
//! index order, so output is identical whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_indexed_parallel<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n` on the current thread.
pub fn map_indexed_sequential<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Feature-dispatched map: parallel when available, sequential fallback.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_indexed_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_sequential(n, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_preserves_index_order() {
        let out = map_indexed(100, |i| i * i);
        let seq = map_indexed_sequential(100, |i| i * i);
        assert_eq!(out, seq);
    }
}
