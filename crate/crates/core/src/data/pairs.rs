use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

use super::InstanceRecord;

/// Candidate (attribute, object) compositions with seen/unseen bookkeeping.
///
/// Pair index order is the tie-breaking order for every ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpace {
    pub pairs: Vec<(usize, usize)>,
    pub seen: Vec<bool>,
    pub unseen: Vec<bool>,
    pub n_attrs: usize,
    pub n_objects: usize,
    index: HashMap<(usize, usize), usize>,
}

impl PairSpace {
    pub fn new(
        pairs: Vec<(usize, usize)>,
        seen: &BTreeSet<(usize, usize)>,
        unseen: &BTreeSet<(usize, usize)>,
        n_attrs: usize,
        n_objects: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("pair space has no feasible pairs".into()));
        }
        let mut index = HashMap::with_capacity(pairs.len());
        for (i, &(a, o)) in pairs.iter().enumerate() {
            if a >= n_attrs || o >= n_objects {
                return Err(Error::Contract(format!("pair ({a}, {o}) outside vocabularies")));
            }
            if index.insert((a, o), i).is_some() {
                return Err(Error::Contract(format!("pair ({a}, {o}) listed twice")));
            }
        }
        Ok(Self {
            seen: pairs.iter().map(|p| seen.contains(p)).collect(),
            unseen: pairs.iter().map(|p| unseen.contains(p)).collect(),
            pairs,
            n_attrs,
            n_objects,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_of(&self, attr: usize, object: usize) -> Option<usize> {
        self.index.get(&(attr, object)).copied()
    }

    /// Copy restricted to the unseen pairs (all flagged unseen).
    pub fn unseen_only(&self) -> Result<Self> {
        let pairs: Vec<_> = self
            .pairs
            .iter()
            .zip(&self.unseen)
            .filter(|(_, u)| **u)
            .map(|(p, _)| *p)
            .collect();
        let unseen = pairs.iter().copied().collect();
        Self::new(pairs, &BTreeSet::new(), &unseen, self.n_attrs, self.n_objects)
    }
}

/// Builds the feasible pair set and its seen/unseen masks.
///
/// Seen pairs are those occurring in `train`. Without `declared`, the
/// feasible set is the sorted union of train pairs, test pairs and `unseen`.
pub fn build_pair_space(
    train: &[&InstanceRecord],
    test: &[&InstanceRecord],
    declared: Option<&[(usize, usize)]>,
    unseen: &[(usize, usize)],
    n_attrs: usize,
    n_objects: usize,
) -> Result<PairSpace> {
    let seen: BTreeSet<_> = train.iter().map(|r| r.pair()).collect::<Result<_>>()?;
    let unseen: BTreeSet<_> = unseen.iter().copied().collect();
    if let Some(p) = unseen.intersection(&seen).next() {
        return Err(Error::Contract(format!("unseen pair {p:?} occurs in the training split")));
    }
    let test_pairs: BTreeSet<_> = test.iter().map(|r| r.pair()).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = match declared {
        Some(list) => {
            let mut out = Vec::with_capacity(list.len());
            let mut dedup = BTreeSet::new();
            for &p in list {
                if dedup.insert(p) {
                    out.push(p);
                }
            }
            if let Some(p) = test_pairs.iter().find(|p| !dedup.contains(p)) {
                return Err(Error::Contract(format!(
                    "test pair (attr {}, object {}) is not in the declared pair list",
                    p.0, p.1
                )));
            }
            out
        }
        None => seen.iter().chain(&test_pairs).chain(&unseen).copied().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    PairSpace::new(pairs, &seen, &unseen, n_attrs, n_objects)
}
