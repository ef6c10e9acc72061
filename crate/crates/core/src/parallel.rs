//! Order-preserving parallel map with a sequential fallback.
//!
//! Every parallel site in the crate maps independent items and collects
//! results in input order, so outputs are bit-identical with and without
//! the `parallel` feature and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn ordered_map<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference version, always available (benches compare both).
pub fn ordered_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over index chunks of size `chunk` covering `0..n`, in order.
/// Chunk boundaries are fixed by `chunk`, never by thread count.
pub fn ordered_chunk_map<U: Send, F>(n: usize, chunk: usize, f: F) -> Vec<U>
where
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    let ranges: Vec<std::ops::Range<usize>> =
        (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect();
    ordered_map(&ranges, |r| f(r.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = ordered_map(&items, |x| x * 2);
        assert_eq!(out, ordered_map_seq(&items, |x| x * 2));
    }

    #[test]
    fn chunk_map_covers_everything_in_order() {
        let out = ordered_chunk_map(10, 3, |r| r.collect::<Vec<_>>());
        assert_eq!(out.concat(), (0..10).collect::<Vec<_>>());
        assert_eq!(out.len(), 4);
    }
}
