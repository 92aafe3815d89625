//! Deterministic data-parallel helpers.
//!
//! Work is mapped in parallel into an index-ordered vector and reduced
//! sequentially afterwards, so results are bitwise identical to the
//! sequential evaluation regardless of thread count. Building without the
//! `parallel` feature removes rayon entirely.

/// Map `f` over `0..n`, preserving index order in the result.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).map(f).collect()
}

/// Sequential variant, always available (used by benchmarks for comparison).
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_serial_bitwise() {
        let f = |i: usize| (i as f64).sin() * 1e3;
        assert_eq!(map_indexed(1000, f), map_indexed_serial(1000, f));
    }
}
