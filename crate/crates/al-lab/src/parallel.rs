//! Fan-out over instances. The parallel path (rayon, on by default) and the
//! sequential fallback produce identical results: every instance draws from
//! its own counter-derived rng stream, and outputs are collected in input
//! order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn ordered_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn ordered_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

/// Always-sequential variant, kept for benchmarking against the parallel path.
pub fn ordered_map_seq<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |&x: &u64| x.wrapping_mul(0x9e3779b97f4a7c15) >> 7;
        assert_eq!(ordered_map(&items, f), ordered_map_seq(&items, f));
    }
}
