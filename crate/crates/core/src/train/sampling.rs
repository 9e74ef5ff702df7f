//! Negative records for single-attribute training and attribute pairs and
//! triples for the multi-attribute triplet terms.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{corr_to_set, CorrelationMatrix, Dataset};
use crate::error::{Error, Result};

/// Candidates that share the object but no attribute, per record.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    eligible: HashMap<usize, Vec<usize>>,
}

impl NegativeSampler {
    /// Indexes the records `indices` of `ds` (normally the train split).
    pub fn new(ds: &Dataset, indices: &[usize]) -> Self {
        let mut by_object: HashMap<usize, Vec<usize>> = HashMap::new();
        for &i in indices {
            by_object.entry(ds.records[i].object).or_default().push(i);
        }
        let eligible = indices
            .iter()
            .map(|&i| {
                let r = &ds.records[i];
                let cands = by_object[&r.object]
                    .iter()
                    .copied()
                    .filter(|&j| !ds.records[j].attrs.iter().any(|a| r.has_attr(*a)))
                    .collect();
                (i, cands)
            })
            .collect();
        Self { eligible }
    }

    pub fn eligible(&self, record: usize) -> &[usize] {
        self.eligible.get(&record).map_or(&[], Vec::as_slice)
    }

    /// A uniformly random record with the same object and disjoint attributes.
    pub fn sample<R: Rng + ?Sized>(&self, record: usize, rng: &mut R) -> Option<usize> {
        self.eligible(record).choose(rng).copied()
    }
}

/// Attributes outside `set`, by decreasing correlation to it, ties by index.
pub fn rank_non_existing(c: &CorrelationMatrix, set: &[usize]) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = (0..c.n())
        .filter(|a| !set.contains(a))
        .map(|a| (a, corr_to_set(c, a, set)))
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.into_iter().map(|(a, _)| a).collect()
}

/// `(strong, neutral)`: the top and bottom 10% of a ranking, and the middle 10%.
///
/// Bucket size is `floor(len / 10)` with a minimum of 1; the neutral bucket
/// starts at `(len − size) / 2`.
pub fn percentile_buckets(ranked: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let len = ranked.len();
    if len == 0 {
        return (Vec::new(), Vec::new());
    }
    let size = (len / 10).max(1);
    let mut strong: Vec<usize> = ranked[..size].to_vec();
    for &a in &ranked[len - size..] {
        if !strong.contains(&a) {
            strong.push(a);
        }
    }
    let start = (len - size) / 2;
    (strong, ranked[start..start + size].to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiSample {
    /// Every (strong, neutral) combination with distinct members.
    pub sym_pairs: Vec<(usize, usize)>,
    pub triple: (usize, usize, usize),
}

/// Three distinct attributes, uniformly at random.
pub fn sample_triple<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 attributes, have {n}")));
    }
    let v = rand::seq::index::sample(rng, n, 3);
    Ok((v.index(0), v.index(1), v.index(2)))
}

pub fn sample_multi<R: Rng + ?Sized>(set: &[usize], c: &CorrelationMatrix, rng: &mut R) -> Result<MultiSample> {
    let triple = sample_triple(c.n(), rng)?;
    let (strong, neutral) = percentile_buckets(&rank_non_existing(c, set));
    let sym_pairs = strong
        .iter()
        .flat_map(|&s| neutral.iter().map(move |&u| (s, u)))
        .filter(|(s, u)| s != u)
        .collect();
    Ok(MultiSample { sym_pairs, triple })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{InstanceRecord, SynthConfig};

    fn dataset(labels: &[(usize, &[usize])]) -> Dataset {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &(object, attrs))| InstanceRecord {
                id: format!("r{i}"),
                feature: vec![0.0],
                object,
                attrs: attrs.to_vec(),
            })
            .collect();
        let mut splits = std::collections::BTreeMap::new();
        splits.insert("train".to_string(), (0..labels.len()).collect());
        Dataset {
            records,
            attr_vocab: (0..4).map(|i| format!("a{i}")).collect(),
            object_vocab: vec!["o0".into(), "o1".into()],
            feature_dim: 1,
            splits,
            pairs: None,
        }
    }

    #[test]
    fn unique_negative() {
        let ds = dataset(&[(0, &[0]), (0, &[1]), (1, &[0])]);
        let s = NegativeSampler::new(&ds, &[0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(s.sample(0, &mut rng), Some(1));
        }
        assert_eq!(s.sample(2, &mut rng), None);
    }

    #[test]
    fn negatives_are_uniform() {
        let ds = dataset(&[(0, &[0]), (0, &[1]), (0, &[2]), (0, &[3]), (0, &[0])]);
        let s = NegativeSampler::new(&ds, &[0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            *counts.entry(s.sample(0, &mut rng).unwrap()).or_insert(0.0) += 1.0;
        }
        assert_eq!(counts.len(), 3);
        let expect = draws as f64 / 3.0;
        let chi2: f64 = counts.values().map(|o| (o - expect).powi(2) / expect).sum();
        // 2 degrees of freedom, p = 0.001
        assert!(chi2 < 13.82, "chi2 = {chi2}");
    }

    #[test]
    fn buckets_for_ten_attributes() {
        let ranked: Vec<usize> = (0..10).rev().collect();
        let (strong, neutral) = percentile_buckets(&ranked);
        assert_eq!(strong, vec![9, 0]);
        // floor rule: size 1 starting at (10 − 1) / 2 = 4, the fifth-ranked
        assert_eq!(neutral, vec![5]);
        let ranked: Vec<usize> = (0..25).collect();
        let (strong, neutral) = percentile_buckets(&ranked);
        assert_eq!(strong, vec![0, 1, 23, 24]);
        assert_eq!(neutral, vec![11, 12]);
    }

    #[test]
    fn equal_correlations_rank_by_index() {
        let c = CorrelationMatrix::from_values(5, &[0.0; 25]).unwrap();
        assert_eq!(rank_non_existing(&c, &[2]), vec![0, 1, 3, 4]);
    }

    #[test]
    fn triples_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (i, j, k) = sample_triple(3, &mut rng).unwrap();
            assert!(i != j && j != k && i != k);
        }
        assert!(matches!(sample_triple(2, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn multi_sample_pairs_cross_buckets() {
        let cfg = SynthConfig {
            n_attrs: 12,
            multi_label: Some(crate::data::MultiLabel { base_rate: 0.3 }),
            ..SynthConfig::default()
        };
        let ds = crate::data::synth_generate(&cfg).unwrap().dataset;
        let c = ds.train_correlation().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = [1, 4];
        let s = sample_multi(&set, &c, &mut rng).unwrap();
        let ranked = rank_non_existing(&c, &set);
        assert_eq!(ranked.len(), 10);
        assert_eq!(s.sym_pairs, vec![(ranked[0], ranked[4]), (ranked[9], ranked[4])]);
    }
}
