use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded permutation of `0..n` cut into `batch_size` chunks; the final short
/// chunk is kept.
pub fn make_batches(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_for_9000_by_256() {
        let b = make_batches(9000, 256, 1);
        assert_eq!(b.len(), 36);
        assert!(b[..35].iter().all(|x| x.len() == 256));
        assert_eq!(b[35].len(), 40);
    }

    #[test]
    fn deterministic_permutation() {
        let a = make_batches(1000, 64, 42);
        assert_eq!(a, make_batches(1000, 64, 42));
        assert_ne!(a, make_batches(1000, 64, 43));
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch() {
        let b = make_batches(10, 256, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 10);
    }
}
