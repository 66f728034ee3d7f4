//! Datasets, vocabulary, batching and synthetic tasks with known joints.

mod batch;
mod synthetic;
mod tsv;
mod vocab;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use batch::{encode_batch, EncodedBatch};
pub use synthetic::{generate_synthetic, BlandTrapSpec, JointEntry, ResponseKind, SyntheticTask, TableEntrySpec, TaskSpec};
pub use tsv::{load_tsv, parse_tsv, tokenize, write_tsv};
pub use vocab::{build_vocab, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Pair {
    pub fn new(source: &str, target: &str) -> Self {
        Pair {
            source: tokenize(source),
            target: tokenize(target),
        }
    }

    pub fn swapped(&self) -> Pair {
        Pair {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Source–target pairs with a seeded 80/10/10 train/valid/test partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(pairs: Vec<Pair>, split_seed: u64) -> Self {
        let n = pairs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut crate::rng::stream(split_seed, "split", 0));
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        let mut splits = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
        Dataset { pairs, splits }
    }

    /// Every pair tagged as training data.
    pub fn train_only(pairs: Vec<Pair>) -> Self {
        let splits = vec![Split::Train; pairs.len()];
        Dataset { pairs, splits }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<Pair> {
        self.pairs
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn swapped(&self) -> Dataset {
        Dataset {
            pairs: self.pairs.iter().map(Pair::swapped).collect(),
            splits: self.splits.clone(),
        }
    }
}
