use rand::seq::SliceRandom;

use super::record::{Dataset, SampleRecord};
use crate::numerics::rng;
use crate::{Error, Result};

/// Shuffled partition of `0..n` into batches of `batch_size` (the last one
/// possibly smaller), determined by `epoch_seed`.
pub fn batch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Iterator over one epoch's record batches.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new(ds: &'a Dataset, batch_size: usize, epoch_seed: u64) -> Result<Self> {
        Ok(Self {
            ds,
            batches: batch_indices(ds.len(), batch_size, epoch_seed)?.into_iter(),
        })
    }
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Vec<&'a SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.batches
            .next()
            .map(|b| b.iter().map(|&i| &self.ds.records[i]).collect())
    }
}
