use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.6,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..SplitSpec::default()
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.train_fraction > 0.0 && self.val_fraction > 0.0 && self.train_fraction + self.val_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidSplit {
                train: self.train_fraction,
                val: self.val_fraction,
            })
        }
    }

    /// `(train, val, test)` sizes: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon keeps exact products such as 5 * 0.6 from flooring to 2.
        let part = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let train = part(self.train_fraction).min(n);
        let val = part(self.val_fraction).min(n - train);
        (train, val, n - train - val)
    }
}

/// Seeded permutation then contiguous train/val/test cuts.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    spec.validate()?;
    let n = corpus.len();
    let (train, val, test) = spec.sizes(n);
    if train == 0 || val == 0 || test == 0 {
        return Err(CorpusError::CorpusTooSmall { count: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let take = |idx: &[usize]| {
        let records = idx.iter().map(|&i| corpus.records()[i].clone()).collect();
        // ids are already unique within the parent corpus
        Corpus::from_records(records).expect("split of a valid corpus")
    };
    Ok((
        take(&order[..train]),
        take(&order[train..train + val]),
        take(&order[train + val..]),
    ))
}
