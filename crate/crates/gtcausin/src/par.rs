//! Data-parallel helpers with a sequential fallback.
//!
//! Everything here is deterministic: parallel maps collect in input order
//! and reductions run left-to-right over the collected results, so output
//! bits do not depend on the thread count. Building with
//! `--no-default-features` removes rayon and runs the same closures on one
//! thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs `f` on equal `width`-sized mutable chunks of `data` (the trailing
/// chunk may be shorter). Each chunk is touched by exactly one closure
/// call, so results are bit-identical to the sequential loop.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(width > 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
}

/// Left-to-right fold of parallel map results. The map runs in parallel,
/// the reduction is sequential in input order.
pub fn map_reduce<I, T, A, F, R>(items: &[I], init: A, f: F, reduce: R) -> A
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
    R: Fn(A, T) -> A,
{
    let mapped = map_slice(items, f);
    mapped.into_iter().fold(init, reduce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(100, |i| i * i);
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, i * i);
        }
    }

    #[test]
    fn chunked_map_matches_sequential() {
        let mut a = vec![0.0f64; 1000];
        let mut b = vec![0.0f64; 1000];
        for_each_chunk_mut(&mut a, 7, |i, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = (i * 31 + j) as f64 * 0.5;
            }
        });
        b.chunks_mut(7).enumerate().for_each(|(i, c)| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = (i * 31 + j) as f64 * 0.5;
            }
        });
        assert_eq!(a, b);
    }

    #[test]
    fn map_reduce_is_ordered() {
        let items: Vec<u64> = (0..50).collect();
        let folded = map_reduce(
            &items,
            String::new(),
            |i| format!("{i},"),
            |acc, s| acc + &s,
        );
        let expected: String = (0..50).map(|i| format!("{i},")).collect();
        assert_eq!(folded, expected);
    }
}
