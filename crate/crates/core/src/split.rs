//! Seeded train/dev/test partitioning by sequence.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::sequence::EventSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<EventSequence>,
    pub dev: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
    /// Input positions of the train, dev and test sequences.
    pub indices: [Vec<usize>; 3],
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Shuffles with `seed` and partitions by `ratios` (rounded; test takes the
/// remainder). Every part must be non-empty.
pub fn split_dataset(seqs: Vec<EventSequence>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig("split ratios must be non-negative and sum to 1".into()));
    }
    let n = seqs.len() as f64;
    let n_train = libm::round(ratios[0] * n) as usize;
    let n_dev = libm::round(ratios[1] * n) as usize;
    if n_train + n_dev > seqs.len() {
        return Err(Error::InvalidConfig("split ratios round past the dataset size".into()));
    }
    let counts = [n_train, n_dev, seqs.len() - n_train - n_dev];
    nonempty(counts, seqs.len())?;
    split_counts(seqs, counts, ratios, seed)
}

/// Train fraction `train`; dev and test get equal halves of the rest (dev
/// takes the odd one).
pub fn split_train_fraction(seqs: Vec<EventSequence>, train: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train > 0.0 && train < 1.0) {
        return Err(Error::InvalidConfig("train fraction must lie in (0, 1)".into()));
    }
    let n_train = libm::round(train * seqs.len() as f64) as usize;
    let rest = seqs.len().saturating_sub(n_train);
    let n_test = rest / 2;
    let counts = [n_train, rest - n_test, n_test];
    nonempty(counts, seqs.len())?;
    let half = (1.0 - train) / 2.0;
    split_counts(seqs, counts, [train, half, half], seed)
}

fn nonempty(counts: [usize; 3], n: usize) -> Result<()> {
    if counts.contains(&0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "{n} sequences cannot fill three non-empty splits {counts:?}"
        )));
    }
    Ok(())
}

/// Partition into exactly `counts` sequences after a seeded shuffle. Parts
/// may be empty.
pub fn split_counts(seqs: Vec<EventSequence>, counts: [usize; 3], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if counts.iter().sum::<usize>() != seqs.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "split sizes {counts:?} do not add up to {} sequences",
            seqs.len()
        )));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng_for(seed, &[]));
    let mut slots: Vec<Option<EventSequence>> = seqs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<EventSequence> { idx.iter().map(|&i| slots[i].take().unwrap()).collect() };
    let (a, rest) = order.split_at(counts[0]);
    let (b, c) = rest.split_at(counts[1]);
    Ok(DatasetSplit {
        train: take(a),
        dev: take(b),
        test: take(c),
        indices: [a.to_vec(), b.to_vec(), c.to_vec()],
        ratios,
        seed,
    })
}
