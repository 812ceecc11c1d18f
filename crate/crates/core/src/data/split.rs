use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded random train/test partition of `0..n`. Both index lists come back sorted.
pub fn random_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

/// Mini-batch layout for one dataset size; the last batch may be partial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    n: usize,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("cannot batch an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if batch_size > n {
            log::warn!("batch size {batch_size} exceeds {n} examples; using a single batch");
        }
        Ok(BatchPlan { n, batch_size })
    }

    pub fn num_batches(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Fisher-Yates shuffle of all rows, chunked into batches.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(rng);
        idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// One epoch of shuffled batches over `0..n`.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    Ok(BatchPlan::new(n, batch_size)?.epoch(rng))
}
