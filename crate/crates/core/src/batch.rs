//! Seeded, stateless batch order. The sample at global position `p` is a
//! pure function of `(seed, p)`, so a resumed run sees the same batches as an
//! uninterrupted one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Draws batches of `batch` indices from `0..n`, one shuffled epoch after
/// another.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        assert!(n > 0 && batch > 0, "empty batch schedule");
        BatchSchedule {
            n,
            batch,
            seed,
            cached: None,
        }
    }

    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        let start = step * self.batch as u64;
        (start..start + self.batch as u64).map(|p| self.at(p)).collect()
    }

    fn at(&mut self, p: u64) -> usize {
        let epoch = p / self.n as u64;
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.cached = Some((epoch, epoch_permutation(self.n, self.seed, epoch)));
        }
        self.cached.as_ref().unwrap().1[(p % self.n as u64) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_cover_every_index() {
        let mut s = BatchSchedule::new(10, 5, 3);
        let mut seen: Vec<usize> = (0..2).flat_map(|k| s.batch(k)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn resumable() {
        let mut a = BatchSchedule::new(7, 3, 9);
        let full: Vec<_> = (0..10).map(|k| a.batch(k)).collect();
        let mut b = BatchSchedule::new(7, 3, 9);
        assert_eq!(b.batch(6), full[6]);
        assert_eq!(b.batch(2), full[2]);
    }

    #[test]
    fn epochs_differ() {
        assert_ne!(epoch_permutation(20, 1, 0), epoch_permutation(20, 1, 1));
        assert_ne!(epoch_permutation(20, 1, 0), epoch_permutation(20, 2, 0));
    }
}
