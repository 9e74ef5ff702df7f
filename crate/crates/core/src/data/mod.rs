//! Dataset ingestion, synthetic generation and attribute co-occurrence statistics.

mod correlation;
mod embeddings;
mod io;
mod pairs;
mod synth;

use std::collections::BTreeMap;

pub use correlation::{compute_correlation, corr_to_set, CorrelationMatrix, CORR_QUANTUM};
pub use embeddings::{load_attr_embeddings, parse_word_vectors, AttributeEmbedding, EmbeddingSource};
pub use io::{load_dataset, write_dataset, DatasetManifest, FeatureDtype};
pub use pairs::{build_pair_space, PairSpace};
pub use synth::{synth_generate, GroundTruth, MultiLabel, PlantedCorrelation, SynthConfig, SynthDataset};

use crate::error::{Error, Result};

/// One sample: a precomputed feature vector with its object and attribute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub feature: Vec<f64>,
    pub object: usize,
    /// Sorted, duplicate-free attribute indices.
    pub attrs: Vec<usize>,
}

impl InstanceRecord {
    pub fn has_attr(&self, a: usize) -> bool {
        self.attrs.binary_search(&a).is_ok()
    }

    /// The (attribute, object) pair of a single-attribute record.
    pub fn pair(&self) -> Result<(usize, usize)> {
        match self.attrs.as_slice() {
            [a] => Ok((*a, self.object)),
            other => Err(Error::Contract(format!(
                "record `{}` has {} attributes; pairs need exactly one",
                self.id,
                other.len()
            ))),
        }
    }
}

/// Seen/unseen pair lists declared by a dataset's pairs file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairLists {
    pub seen: Vec<(usize, usize)>,
    pub unseen: Vec<(usize, usize)>,
}

/// In-memory dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<InstanceRecord>,
    pub attr_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
    pub feature_dim: usize,
    /// Split name to record indices.
    pub splits: BTreeMap<String, Vec<usize>>,
    pub pairs: Option<PairLists>,
}

impl Dataset {
    pub fn n_attrs(&self) -> usize {
        self.attr_vocab.len()
    }

    pub fn n_objects(&self) -> usize {
        self.object_vocab.len()
    }

    pub fn split_indices(&self, name: &str) -> Result<&[usize]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("dataset has no `{name}` split")))
    }

    pub fn split(&self, name: &str) -> Result<Vec<&InstanceRecord>> {
        Ok(self.split_indices(name)?.iter().map(|&i| &self.records[i]).collect())
    }

    /// True when some record carries more than one attribute.
    pub fn is_multi_attr(&self) -> bool {
        self.records.iter().any(|r| r.attrs.len() > 1)
    }

    /// Attribute correlations over the training split.
    pub fn train_correlation(&self) -> Result<CorrelationMatrix> {
        let train = self.split("train")?;
        compute_correlation(train.iter().map(|r| r.attrs.as_slice()), self.n_attrs())
    }

    /// Pair space from the train/test splits and the declared pair lists, if any.
    pub fn pair_space(&self) -> Result<PairSpace> {
        let train = self.split("train")?;
        let test = self.split("test")?;
        match &self.pairs {
            Some(p) => {
                let declared: Vec<_> = p.seen.iter().chain(&p.unseen).copied().collect();
                build_pair_space(&train, &test, Some(&declared), &p.unseen, self.n_attrs(), self.n_objects())
            }
            None => build_pair_space(&train, &test, None, &[], self.n_attrs(), self.n_objects()),
        }
    }

    /// Stable digest of an ordered vocabulary, used to reject mismatched checkpoints.
    pub fn vocab_hash(vocab: &[String]) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for token in vocab {
            h.update(token.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
