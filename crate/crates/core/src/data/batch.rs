use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub targets: Targets,
    pub epoch: u64,
    pub index_in_epoch: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless epoch-cycling stream of mini-batches.
///
/// The batch at any position is a pure function of the dataset, batch size,
/// shuffle flag, seed and position, so an iterator can be restarted at any step.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    data: Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    position: u64,
    epoch_order: Option<(u64, Vec<usize>)>,
}

pub fn batch_iterator(ds: &Dataset, batch_size: usize, shuffle_each_epoch: bool, seed: u64) -> Result<BatchIterator> {
    BatchIterator::new(ds.clone(), batch_size, shuffle_each_epoch, seed)
}

impl BatchIterator {
    pub fn new(data: Dataset, batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > data.len() {
            return Err(Error::validation(format!(
                "batch size {batch_size} must lie in [1, {}]",
                data.len()
            )));
        }
        Ok(BatchIterator {
            data,
            batch_size,
            shuffle,
            seed,
            position: 0,
            epoch_order: None,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.batch_size) as u64
    }

    /// Moves the stream so the next batch is the one at `position`.
    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    fn order_for(&mut self, epoch: u64) -> &[usize] {
        let stale = !matches!(&self.epoch_order, Some((e, _)) if *e == epoch);
        if stale {
            let mut order: Vec<usize> = (0..self.data.len()).collect();
            if self.shuffle {
                RngState::with_stream(self.seed, epoch).shuffle(&mut order);
            }
            self.epoch_order = Some((epoch, order));
        }
        &self.epoch_order.as_ref().expect("set above").1
    }

    /// The batch at an absolute stream position.
    pub fn batch_at(&mut self, position: u64) -> Batch {
        let per_epoch = self.batches_per_epoch();
        let epoch = position / per_epoch;
        let index = (position % per_epoch) as usize;
        let n = self.data.len();
        let bs = self.batch_size;
        let rows: Vec<usize> = self.order_for(epoch)[index * bs..((index + 1) * bs).min(n)].to_vec();
        let subset = self.data.subset(&rows);
        Batch {
            features: subset.features().expect("batches are non-empty"),
            targets: subset.targets().clone(),
            epoch,
            index_in_epoch: index,
        }
    }
}

impl Iterator for BatchIterator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batch_at(self.position);
        self.position += 1;
        Some(b)
    }
}
