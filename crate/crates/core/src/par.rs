//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out over rayon; without it they run
//! the same closures sequentially. Results are always gathered in input order
//! and reductions are summed sequentially afterwards, so output does not
//! depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Maps `f` over a slice, collecting in order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Deterministic chunked sum: partial results per fixed-size chunk are
/// computed in parallel and folded left to right.
pub fn chunked_sum<R, F, G>(n: usize, chunk: usize, partial: F, mut fold: G, init: R) -> R
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
    G: FnMut(R, R) -> R,
{
    let chunk = chunk.max(1);
    let nchunks = n.div_ceil(chunk);
    let parts = map_range(nchunks, |c| partial(c * chunk..((c + 1) * chunk).min(n)));
    let mut acc = init;
    for p in parts {
        acc = fold(acc, p);
    }
    acc
}

pub fn sort_unstable<T: Ord + Send>(v: &mut [T]) {
    #[cfg(feature = "parallel")]
    {
        v.par_sort_unstable()
    }
    #[cfg(not(feature = "parallel"))]
    {
        v.sort_unstable()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_order() {
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn chunked_sum_matches_serial() {
        let total = chunked_sum(1001, 64, |r| r.sum::<usize>(), |a, b| a + b, 0);
        assert_eq!(total, 1001 * 1000 / 2);
    }
}
