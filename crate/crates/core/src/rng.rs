//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the run seed, selected by a
//! stream id, and positioned at a fixed word offset per chunk. A chunk's
//! draws therefore depend only on `(seed, stream, chunk)`, never on which
//! worker thread evaluates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Words reserved per chunk; chunks never draw anywhere near this many.
const CHUNK_WORDS: u128 = 1 << 40;

pub const STREAM_SEMINORM: u64 = 1;
pub const STREAM_CRITICAL: u64 = 2;
pub const STREAM_L2: u64 = 3;
pub const STREAM_VOLUME: u64 = 4;
pub const STREAM_SUP: u64 = 5;
pub const STREAM_INCREMENT: u64 = 6;
pub const STREAM_DOMAIN: u64 = 7;
pub const STREAM_DIRECTIONS: u64 = 8;
pub const STREAM_TEST_FIELDS: u64 = 9;

pub fn chunk_rng(seed: u64, stream: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(chunk as u128 * CHUNK_WORDS);
    rng
}

/// Runs `f(chunk_index, len)` over `total` items split into fixed chunks and
/// returns the per-chunk results in chunk order.
pub fn map_chunks<T, F>(total: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync,
{
    let chunks = total.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let len = chunk.min(total - k * chunk);
            f(k as u64, len)
        })
        .collect()
}

/// Pairwise reduction in a fixed tree shape, independent of thread count.
pub fn pairwise_reduce<T, F>(mut items: Vec<T>, combine: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(chunk_rng(7, 1, 3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(chunk_rng(7, 1, 3), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(chunk_rng(7, 2, 3), |r, _| Some(r.random())).collect();
        let d: Vec<u64> = (0..4).map(|_| 0).scan(chunk_rng(7, 1, 4), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let v: Vec<f64> = (0..1001).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let s1 = pairwise_reduce(v.clone(), |a, b| a + b).unwrap();
        let s2 = pairwise_reduce(v, |a, b| a + b).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert!(pairwise_reduce(Vec::<f64>::new(), |a, b| a + b).is_none());
    }
}
