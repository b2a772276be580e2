//! Deterministic chunked parallel map.
//!
//! Work items are split into fixed-size chunks whose results are collected in
//! chunk order, so floating-point reductions performed over the returned
//! vector do not depend on the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;

/// Number of work items (paths, pairs) per chunk.
pub const CHUNK_SIZE: usize = 1024;

pub(crate) fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK_SIZE))
        .map(|c| c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(n))
        .collect()
}

/// Maps `f` over the chunks of `0..n` in parallel; results are in chunk order.
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunks(n).into_par_iter().map(f).collect()
}

/// Fallible variant of [`map_chunks`]; the first error in chunk order wins.
pub(crate) fn try_map_chunks<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(Range<usize>) -> Result<T, E> + Sync + Send,
{
    map_chunks(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        let c = chunks(2 * CHUNK_SIZE + 5);
        assert_eq!(c.len(), 3);
        assert_eq!(c[2], 2 * CHUNK_SIZE..2 * CHUNK_SIZE + 5);
        assert!(chunks(0).is_empty());
    }

    #[test]
    fn order_is_preserved() {
        let v = map_chunks(5000, |r| r.start);
        let expected: Vec<usize> = chunks(5000).iter().map(|r| r.start).collect();
        assert_eq!(v, expected);
    }
}
