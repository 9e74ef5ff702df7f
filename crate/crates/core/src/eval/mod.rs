//! Evaluation metrics: top-k accuracy, mAUC, closed-world CZSL and the
//! generalized seen/unseen bias sweep.

mod report;

pub use report::{evaluate, removal_scatter, scatter_tsv, CzslReport, EvalReport};

use serde::Serialize;

use crate::data::PairSpace;
use crate::error::{Error, Result};

/// Position of `truth` when labels are sorted by decreasing score, ties by index.
fn rank_of(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count()
}

/// Index of the best score, ties to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(j);
        }
    }
    best
}

/// Fraction of instances whose true label is among the `k` best scores.
pub fn topk_accuracy(scores: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::shape("topk_accuracy", &[scores.len()], &[truth.len()]));
    }
    if scores.is_empty() {
        return Err(Error::Contract("top-k accuracy of no instances".into()));
    }
    let mut hits = 0;
    for (s, &t) in scores.iter().zip(truth) {
        if k == 0 || k > s.len() {
            return Err(Error::Config(format!("k = {k} with {} labels", s.len())));
        }
        if t >= s.len() {
            return Err(Error::Contract(format!("label {t} out of {}", s.len())));
        }
        if rank_of(s, t) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaucReport {
    pub mauc: f64,
    /// `None` for attributes without both positive and negative instances.
    pub per_attr: Vec<Option<f64>>,
}

/// ROC-AUC of one attribute: `P(score_pos > score_neg)`, ties counted ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Mann-Whitney with mid-ranks; all quantities are exact half-integers.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-attribute AUC over `scores[instance][attr]`, averaged over attributes
/// that have both positives and negatives.
pub fn mauc(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MaucReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::shape("mauc", &[scores.len()], &[labels.len()]));
    }
    let n = scores[0].len();
    if scores.iter().any(|r| r.len() != n) || labels.iter().any(|l| l.len() != n) {
        return Err(Error::Contract("ragged score or label matrix".into()));
    }
    let per_attr: Vec<Option<f64>> = (0..n)
        .map(|a| {
            let s: Vec<f64> = scores.iter().map(|r| r[a]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[a]).collect();
            let v = auc(&s, &l);
            if v.is_none() {
                log::warn!("attribute {a} has no positive or no negative instance; excluded from mAUC");
            }
            v
        })
        .collect();
    let included: Vec<f64> = per_attr.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Contract("every attribute lacks positives or negatives".into()));
    }
    Ok(MaucReport {
        mauc: included.iter().sum::<f64>() / included.len() as f64,
        per_attr,
    })
}

/// Top-k accuracy of the true pair among all pairs of `space`.
///
/// `pair_scores[i]` follows the order of `space.pairs`.
pub fn czsl_topk(pair_scores: &[Vec<f64>], truth: &[(usize, usize)], space: &PairSpace, k: usize) -> Result<f64> {
    let idx = truth_indices(truth, space)?;
    topk_accuracy(pair_scores, &idx, k)
}

fn truth_indices(truth: &[(usize, usize)], space: &PairSpace) -> Result<Vec<usize>> {
    truth
        .iter()
        .map(|&(a, o)| {
            space
                .index_of(a, o)
                .ok_or_else(|| Error::Contract(format!("test pair (attr {a}, object {o}) is not feasible")))
        })
        .collect()
}

/// One operating point of the bias sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasPoint {
    pub bias: f64,
    pub seen: f64,
    pub unseen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizedReport {
    pub best_hm: f64,
    /// Seen and unseen accuracy at the best harmonic mean.
    pub best_seen: f64,
    pub best_unseen: f64,
    pub auc: f64,
    /// Unseen-instance accuracy with only unseen pairs as candidates.
    pub closed: f64,
    pub curve: Vec<BiasPoint>,
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Per-instance summary: the gap between the best seen and best unseen
/// score, and whether each restricted argmax is the true pair.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    truth_unseen: bool,
    gap: f64,
    seen_first: bool,
    seen_ok: bool,
    unseen_ok: bool,
}

impl Outcome {
    /// Correct at bias `b` (added to unseen scores); ties go to the lower pair index.
    fn correct(&self, b: f64) -> bool {
        let seen_wins = self.gap > b || (self.gap == b && self.seen_first);
        if self.truth_unseen {
            !seen_wins && self.unseen_ok
        } else {
            seen_wins && self.seen_ok
        }
    }
}

fn outcomes(pair_scores: &[Vec<f64>], truth: &[usize], space: &PairSpace) -> Result<Vec<Outcome>> {
    let seen_idx: Vec<usize> = (0..space.len()).filter(|&k| !space.unseen[k]).collect();
    let unseen_idx: Vec<usize> = (0..space.len()).filter(|&k| space.unseen[k]).collect();
    if seen_idx.is_empty() || unseen_idx.is_empty() {
        return Err(Error::Contract("generalized evaluation needs seen and unseen pairs".into()));
    }
    let best = |s: &[f64], idx: &[usize]| -> usize {
        let mut b = idx[0];
        for &k in &idx[1..] {
            if s[k] > s[b] {
                b = k;
            }
        }
        b
    };
    pair_scores
        .iter()
        .zip(truth)
        .map(|(s, &t)| {
            if s.len() != space.len() {
                return Err(Error::shape("pair scores", &[s.len()], &[space.len()]));
            }
            let (bs, bu) = (best(s, &seen_idx), best(s, &unseen_idx));
            Ok(Outcome {
                truth_unseen: space.unseen[t],
                gap: s[bs] - s[bu],
                seen_first: bs < bu,
                seen_ok: bs == t,
                unseen_ok: bu == t,
            })
        })
        .collect()
}

/// `−∞`, the midpoints between consecutive distinct seen/unseen score gaps, `+∞`.
///
/// Every achievable (seen, unseen) operating point is visited exactly once
/// and no grid value coincides with a gap, so no tie-breaking is involved.
pub fn bias_grid(pair_scores: &[Vec<f64>], truth: &[(usize, usize)], space: &PairSpace) -> Result<Vec<f64>> {
    let idx = truth_indices(truth, space)?;
    let mut gaps: Vec<f64> = outcomes(pair_scores, &idx, space)?.iter().map(|o| o.gap).collect();
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    let mut grid = vec![f64::NEG_INFINITY];
    grid.extend(gaps.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    grid.push(f64::INFINITY);
    Ok(grid)
}

/// Seen/unseen accuracies as a bias is added to every unseen pair score.
///
/// Uses [`bias_grid`] when `grid` is `None`. AUC is the trapezoidal area
/// under unseen accuracy as a function of seen accuracy.
pub fn generalized_czsl(
    pair_scores: &[Vec<f64>],
    truth: &[(usize, usize)],
    space: &PairSpace,
    grid: Option<&[f64]>,
) -> Result<GeneralizedReport> {
    let idx = truth_indices(truth, space)?;
    if pair_scores.len() != idx.len() {
        return Err(Error::shape("generalized_czsl", &[pair_scores.len()], &[idx.len()]));
    }
    let out = outcomes(pair_scores, &idx, space)?;
    let n_unseen = out.iter().filter(|o| o.truth_unseen).count();
    let n_seen = out.len() - n_unseen;
    if n_seen == 0 || n_unseen == 0 {
        return Err(Error::Contract(format!(
            "generalized evaluation needs seen and unseen instances ({n_seen} seen, {n_unseen} unseen)"
        )));
    }
    let own;
    let grid = match grid {
        Some(g) => {
            if g.is_empty() || g.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("bias grid must be nonempty and ascending".into()));
            }
            g
        }
        None => {
            own = bias_grid(pair_scores, truth, space)?;
            &own
        }
    };
    let curve: Vec<BiasPoint> = grid
        .iter()
        .map(|&b| {
            let (mut s, mut u) = (0usize, 0usize);
            for o in &out {
                if o.correct(b) {
                    if o.truth_unseen {
                        u += 1;
                    } else {
                        s += 1;
                    }
                }
            }
            BiasPoint {
                bias: b,
                seen: s as f64 / n_seen as f64,
                unseen: u as f64 / n_unseen as f64,
            }
        })
        .collect();
    let auc = curve
        .windows(2)
        .map(|w| (w[0].seen - w[1].seen).abs() * (w[0].unseen + w[1].unseen) / 2.0)
        .sum();
    let best = curve
        .iter()
        .copied()
        .max_by(|a, b| harmonic_mean(a.seen, a.unseen).total_cmp(&harmonic_mean(b.seen, b.unseen)))
        .expect("nonempty grid");
    let closed = out.iter().filter(|o| o.truth_unseen && o.unseen_ok).count() as f64 / n_unseen as f64;
    Ok(GeneralizedReport {
        best_hm: harmonic_mean(best.seen, best.unseen),
        best_seen: best.seen,
        best_unseen: best.unseen,
        auc,
        closed,
        curve,
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation (Pearson of mid-ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&mid_ranks(x), &mid_ranks(y))
}

#[cfg(test)]
mod tests;
