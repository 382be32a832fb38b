//! Parallel map helpers and deterministic RNG substreams.
//!
//! Replicate-style workloads (Monte Carlo reps, bootstrap resamples, grid
//! cells) fan out through [`map_indexed`]. With the `parallel` feature the
//! work runs on the rayon pool; without it the same closure runs sequentially.
//! Output order is by index either way, and every worker derives its RNG
//! from [`substream`], so results never depend on the schedule or worker
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Mixes a root seed with tags (replicate index, sample size, ...) into an
/// independent deterministic RNG stream.
pub fn substream(root: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut z = root;
    for &t in tags {
        z ^= t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    ChaCha12Rng::seed_from_u64(z)
}

/// Applies `f` to `0..count`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Applies `f` to `0..count`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Maps `f` over a slice by index, in index order.
pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
