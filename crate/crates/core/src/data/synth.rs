//! Synthetic attribute-object features with known generating structure.
//!
//! Each feature is `prototype[object] + Σ_{a∈attrs} direction[a] + noise`.
//! Planted correlations make one attribute's direction share a component with
//! another's and, for multi-label data, make their labels co-occur.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::{Dataset, InstanceRecord, PairLists};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorrelation {
    pub a: usize,
    pub b: usize,
    /// Weight of `direction[a]` inside `direction[b]`, in [0, 1].
    pub share: f64,
    /// Probability that `b`'s label copies `a`'s (multi-label only).
    pub cooccur: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabel {
    /// Independent inclusion probability of each attribute before planting.
    pub base_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_attrs: usize,
    pub n_objects: usize,
    pub feature_dim: usize,
    /// Records per (attribute, object) pair; per object in multi-label mode.
    pub per_pair_count: usize,
    pub noise_sigma: f64,
    pub corr_structure: Vec<PlantedCorrelation>,
    pub multi_label: Option<MultiLabel>,
    /// Pairs whose records all go to the test split.
    pub unseen_pairs: usize,
    /// Fraction of each seen pair's (or object's) records held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_attrs: 6,
            n_objects: 5,
            feature_dim: 32,
            per_pair_count: 40,
            noise_sigma: 0.05,
            corr_structure: Vec::new(),
            multi_label: None,
            unseen_pairs: 0,
            test_fraction: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub prototypes: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.per_pair_count < 1 {
        return Err(Error::Config("per_pair_count must be at least 1".into()));
    }
    if cfg.n_attrs < 2 || cfg.n_objects < 1 || cfg.feature_dim < 1 {
        return Err(Error::Config("need at least 2 attributes, 1 object and feature_dim >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) || cfg.noise_sigma < 0.0 {
        return Err(Error::Config("test_fraction must be in [0, 1) and noise_sigma >= 0".into()));
    }
    for p in &cfg.corr_structure {
        if p.a >= cfg.n_attrs || p.b >= cfg.n_attrs || p.a == p.b {
            return Err(Error::Config(format!("planted correlation ({}, {}) is invalid", p.a, p.b)));
        }
        if !(0.0..=1.0).contains(&p.share) || !(0.0..=1.0).contains(&p.cooccur) {
            return Err(Error::Config("share and cooccur must be in [0, 1]".into()));
        }
    }
    if cfg.feature_dim < cfg.n_attrs + cfg.n_objects {
        log::warn!(
            "feature_dim {} < n_attrs + n_objects = {}; directions will not be separable",
            cfg.feature_dim,
            cfg.n_attrs + cfg.n_objects
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_objects).map(|_| gaussian(&mut rng, dim)).collect();
    let mut directions: Vec<Vec<f64>> = (0..cfg.n_attrs).map(|_| gaussian(&mut rng, dim)).collect();
    for p in &cfg.corr_structure {
        let own = (1.0 - p.share * p.share).sqrt();
        let shared = directions[p.a].clone();
        for (d, s) in directions[p.b].iter_mut().zip(shared) {
            *d = p.share * s + own * *d;
        }
    }

    let make = |rng: &mut ChaCha8Rng, object: usize, attrs: &[usize]| -> Vec<f64> {
        let mut f = prototypes[object].clone();
        for &a in attrs {
            for (x, d) in f.iter_mut().zip(&directions[a]) {
                *x += d;
            }
        }
        if cfg.noise_sigma > 0.0 {
            for x in &mut f {
                *x += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        f
    };

    let mut records = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let held_out = |count: usize| ((count as f64 * cfg.test_fraction).round() as usize).min(count - 1);
    let pairs = match &cfg.multi_label {
        None => {
            let unseen = choose_unseen(&mut rng, cfg)?;
            let mut lists = PairLists::default();
            for o in 0..cfg.n_objects {
                for a in 0..cfg.n_attrs {
                    let is_unseen = unseen.contains(&(a, o));
                    if is_unseen {
                        lists.unseen.push((a, o));
                    } else {
                        lists.seen.push((a, o));
                    }
                    let n_test = if is_unseen { cfg.per_pair_count } else { held_out(cfg.per_pair_count) };
                    for k in 0..cfg.per_pair_count {
                        let feature = make(&mut rng, o, &[a]);
                        let idx = records.len();
                        records.push(InstanceRecord {
                            id: format!("o{o}_a{a}_{k}"),
                            feature,
                            object: o,
                            attrs: vec![a],
                        });
                        if k + n_test >= cfg.per_pair_count {
                            test.push(idx);
                        } else {
                            train.push(idx);
                        }
                    }
                }
            }
            Some(lists)
        }
        Some(ml) => {
            for o in 0..cfg.n_objects {
                let n_test = held_out(cfg.per_pair_count);
                for k in 0..cfg.per_pair_count {
                    let attrs = sample_labels(&mut rng, cfg, ml.base_rate);
                    let feature = make(&mut rng, o, &attrs);
                    let idx = records.len();
                    records.push(InstanceRecord {
                        id: format!("o{o}_{k}"),
                        feature,
                        object: o,
                        attrs,
                    });
                    if k + n_test >= cfg.per_pair_count {
                        test.push(idx);
                    } else {
                        train.push(idx);
                    }
                }
            }
            None
        }
    };

    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), train);
    splits.insert("test".to_string(), test);
    Ok(SynthDataset {
        dataset: Dataset {
            records,
            attr_vocab: (0..cfg.n_attrs).map(|i| format!("attr{i}")).collect(),
            object_vocab: (0..cfg.n_objects).map(|i| format!("obj{i}")).collect(),
            feature_dim: dim,
            splits,
            pairs,
        },
        truth: GroundTruth { prototypes, directions },
    })
}

fn sample_labels(rng: &mut ChaCha8Rng, cfg: &SynthConfig, base_rate: f64) -> Vec<usize> {
    let mut present: Vec<bool> = (0..cfg.n_attrs).map(|_| rng.random_bool(base_rate)).collect();
    for p in &cfg.corr_structure {
        if rng.random_bool(p.cooccur) {
            present[p.b] = present[p.a];
        }
    }
    if !present.iter().any(|&x| x) {
        present[rng.random_range(0..cfg.n_attrs)] = true;
    }
    (0..cfg.n_attrs).filter(|&a| present[a]).collect()
}

/// Picks held-out pairs so every attribute keeps a seen pair and every
/// object keeps two seen attributes (negative samples stay available).
fn choose_unseen(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Vec<(usize, usize)>> {
    let mut candidates: Vec<(usize, usize)> = (0..cfg.n_objects)
        .flat_map(|o| (0..cfg.n_attrs).map(move |a| (a, o)))
        .collect();
    candidates.shuffle(rng);
    let mut attr_seen = vec![cfg.n_objects; cfg.n_attrs];
    let mut obj_seen = vec![cfg.n_attrs; cfg.n_objects];
    let mut chosen = Vec::new();
    for (a, o) in candidates {
        if chosen.len() == cfg.unseen_pairs {
            break;
        }
        if attr_seen[a] > 1 && obj_seen[o] > 2 {
            attr_seen[a] -= 1;
            obj_seen[o] -= 1;
            chosen.push((a, o));
        }
    }
    if chosen.len() < cfg.unseen_pairs {
        return Err(Error::Config(format!(
            "cannot hold out {} pairs while keeping every attribute and object seen",
            cfg.unseen_pairs
        )));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_correlation;

    fn small() -> SynthConfig {
        SynthConfig {
            n_attrs: 3,
            n_objects: 2,
            feature_dim: 8,
            per_pair_count: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_features_are_exact_sums() {
        let cfg = SynthConfig { noise_sigma: 0.0, ..small() };
        let s = synth_generate(&cfg).unwrap();
        for r in &s.dataset.records {
            let expect: Vec<f64> = s.truth.prototypes[r.object]
                .iter()
                .zip(&s.truth.directions[r.attrs[0]])
                .map(|(p, d)| p + d)
                .collect();
            assert_eq!(r.feature, expect);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(synth_generate(&small()).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn rejects_empty_pairs() {
        let cfg = SynthConfig { per_pair_count: 0, ..small() };
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn unseen_pairs_only_in_test() {
        let cfg = SynthConfig {
            n_attrs: 6,
            n_objects: 5,
            unseen_pairs: 4,
            ..SynthConfig::default()
        };
        let s = synth_generate(&cfg).unwrap();
        let ds = &s.dataset;
        let unseen = &ds.pairs.as_ref().unwrap().unseen;
        assert_eq!(unseen.len(), 4);
        for r in ds.split("train").unwrap() {
            assert!(!unseen.contains(&r.pair().unwrap()));
        }
        let space = ds.pair_space().unwrap();
        assert_eq!(space.len(), 30);
        assert_eq!(space.unseen.iter().filter(|&&u| u).count(), 4);
    }

    #[test]
    fn planted_cooccurrence_correlates_labels() {
        let cfg = SynthConfig {
            n_attrs: 6,
            n_objects: 3,
            per_pair_count: 100,
            multi_label: Some(MultiLabel { base_rate: 0.3 }),
            corr_structure: vec![PlantedCorrelation {
                a: 0,
                b: 1,
                share: 0.7,
                cooccur: 0.8,
            }],
            ..SynthConfig::default()
        };
        let s = synth_generate(&cfg).unwrap();
        let c = compute_correlation(s.dataset.records.iter().map(|r| r.attrs.as_slice()), 6).unwrap();
        assert!(c.get(0, 1) > 0.5, "corr = {}", c.get(0, 1));
    }
}
