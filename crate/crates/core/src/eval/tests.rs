use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;

fn space(pairs: &[(usize, usize)], unseen: &[(usize, usize)], n: usize, m: usize) -> PairSpace {
    let unseen: BTreeSet<_> = unseen.iter().copied().collect();
    let seen: BTreeSet<_> = pairs.iter().copied().filter(|p| !unseen.contains(p)).collect();
    PairSpace::new(pairs.to_vec(), &seen, &unseen, n, m).unwrap()
}

#[test]
fn topk_examples() {
    let s = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.7, 0.1]];
    assert_eq!(topk_accuracy(&s, &[0, 1], 1).unwrap(), 1.0);
    assert_eq!(topk_accuracy(&s, &[2, 2], 1).unwrap(), 0.0);
    let s4 = vec![vec![1.0, 0.0]; 4];
    assert_eq!(topk_accuracy(&s4, &[0, 1, 0, 1], 1).unwrap(), 0.5);
    assert!(topk_accuracy(&s4, &[0, 1, 0, 1], 3).is_err());
}

#[test]
fn topk_ties_go_to_lower_index() {
    let s = vec![vec![0.5, 0.5, 0.5]];
    assert_eq!(topk_accuracy(&s, &[0], 1).unwrap(), 1.0);
    assert_eq!(topk_accuracy(&s, &[1], 1).unwrap(), 0.0);
    assert_eq!(topk_accuracy(&s, &[1], 2).unwrap(), 1.0);
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.1], &[true, false]), Some(1.0));
    assert_eq!(auc(&[0.1, 0.9], &[true, false]), Some(0.0));
    assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false]), Some(0.5));
    assert_eq!(auc(&[0.3, 0.4], &[true, true]), None);
}

#[test]
fn mauc_excludes_degenerate_attributes() {
    let scores = vec![vec![0.9, 0.2], vec![0.1, 0.3]];
    let labels = vec![vec![true, true], vec![false, true]];
    let r = mauc(&scores, &labels).unwrap();
    assert_eq!(r.per_attr, vec![Some(1.0), None]);
    assert_eq!(r.mauc, 1.0);
    assert!(mauc(&scores, &[vec![true, true], vec![true, true]]).is_err());
}

#[test]
fn single_feasible_pair_is_always_right() {
    let sp = space(&[(0, 0)], &[], 1, 1);
    assert_eq!(czsl_topk(&[vec![0.2], vec![0.9]], &[(0, 0), (0, 0)], &sp, 1).unwrap(), 1.0);
}

#[test]
fn infeasible_truth_is_an_error() {
    let sp = space(&[(0, 0), (1, 1)], &[], 2, 2);
    assert!(czsl_topk(&[vec![0.2, 0.1]], &[(1, 0)], &sp, 1).is_err());
}

#[test]
fn harmonic_mean_of_equal_inputs() {
    assert_eq!(harmonic_mean(0.5, 0.5), 0.5);
    assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
}

#[test]
fn all_tied_scores_by_hand() {
    // pairs: 0 seen, 1 seen, 2 unseen, 3 unseen
    let pairs = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let sp = space(&pairs, &[(0, 1), (1, 1)], 2, 2);
    let scores = vec![vec![0.25; 4]; 4];
    let truth = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let g = generalized_czsl(&scores, &truth, &sp, None).unwrap();
    // every gap is 0: grid is {−∞, +∞}
    // −∞: predicted pair 0, so one of two seen instances is right, no unseen
    // +∞: predicted pair 2, so one of two unseen instances is right, no seen
    let pts: Vec<(f64, f64)> = g.curve.iter().map(|p| (p.seen, p.unseen)).collect();
    assert_eq!(pts, vec![(0.5, 0.0), (0.0, 0.5)]);
    assert_eq!(g.auc, 0.5 * (0.0 + 0.5) / 2.0);
    assert_eq!(g.closed, 0.5);
    assert_eq!(g.best_hm, 0.0);
    // an explicit grid hitting the gap resolves the tie by pair index
    let g0 = generalized_czsl(&scores, &truth, &sp, Some(&[0.0])).unwrap();
    assert_eq!((g0.curve[0].seen, g0.curve[0].unseen), (0.5, 0.0));
}

#[test]
fn bias_limits() {
    let pairs = [(0, 0), (1, 1)];
    let sp = space(&pairs, &[(1, 1)], 2, 2);
    let scores = vec![vec![0.9, 0.1], vec![0.8, 0.3]];
    let truth = [(0, 0), (1, 1)];
    let g = generalized_czsl(&scores, &truth, &sp, None).unwrap();
    let first = g.curve.first().unwrap();
    let last = g.curve.last().unwrap();
    assert_eq!((first.seen, first.unseen), (1.0, 0.0));
    assert_eq!((last.seen, last.unseen), (0.0, 1.0));
    // gaps 0.8 and 0.5; at the midpoint only the unseen instance flips
    assert_eq!(g.curve.len(), 3);
    assert_eq!((g.curve[1].seen, g.curve[1].unseen), (1.0, 1.0));
    assert_eq!(g.best_hm, 1.0);
}

#[test]
fn generalized_needs_both_kinds_of_instances() {
    let sp = space(&[(0, 0), (1, 1)], &[(1, 1)], 2, 2);
    assert!(generalized_czsl(&[vec![0.5, 0.4]], &[(0, 0)], &sp, None).is_err());
}

#[test]
fn spearman_of_monotone_maps() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 90.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0], &[0.0, 2.0]), None);
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn score_matrix() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    (1usize..=20, 1usize..=6).prop_flat_map(|(rows, cols)| {
        (
            prop::collection::vec(prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), cols), rows),
            prop::collection::vec(prop::collection::vec(any::<bool>(), cols), rows),
        )
    })
}

proptest! {
    #[test]
    fn mauc_matches_pair_counting((scores, labels) in score_matrix()) {
        let n = scores[0].len();
        let per: Vec<Option<f64>> = (0..n)
            .map(|a| {
                let s: Vec<f64> = scores.iter().map(|r| r[a]).collect();
                let l: Vec<bool> = labels.iter().map(|r| r[a]).collect();
                brute_auc(&s, &l)
            })
            .collect();
        match mauc(&scores, &labels) {
            Ok(r) => prop_assert_eq!(r.per_attr, per),
            Err(_) => prop_assert!(per.iter().all(Option::is_none)),
        }
    }

    #[test]
    fn czsl_topk_is_monotone_in_k(scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..10), t in prop::collection::vec(0usize..6, 10)) {
        let pairs: Vec<_> = (0..3).flat_map(|a| (0..2).map(move |o| (a, o))).collect();
        let sp = space(&pairs, &[], 3, 2);
        let truth: Vec<_> = scores.iter().zip(&t).map(|(_, &k)| pairs[k]).collect();
        let mut last = 0.0;
        for k in 1..=6 {
            let acc = czsl_topk(&scores, &truth, &sp, k).unwrap();
            prop_assert!(acc >= last);
            last = acc;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn generalized_auc_ignores_common_shift(
        scores in prop::collection::vec(prop::collection::vec((0u32..1024).prop_map(|v| v as f64 / 1024.0), 6), 4..16),
        t in prop::collection::vec(0usize..6, 16),
        shift in (-8i32..8).prop_map(|v| v as f64 / 4.0),
    ) {
        let pairs: Vec<_> = (0..3).flat_map(|a| (0..2).map(move |o| (a, o))).collect();
        let sp = space(&pairs, &[(1, 0), (2, 1)], 3, 2);
        let mut truth: Vec<_> = scores.iter().zip(&t).map(|(_, &k)| pairs[k]).collect();
        truth[0] = (0, 0);
        truth[1] = (1, 0);
        let shifted: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        let a = generalized_czsl(&scores, &truth, &sp, None).unwrap();
        let b = generalized_czsl(&shifted, &truth, &sp, None).unwrap();
        prop_assert_eq!(a.auc, b.auc);
        prop_assert_eq!(a.best_hm, b.best_hm);
        for p in &a.curve {
            prop_assert!((0.0..=1.0).contains(&p.seen) && (0.0..=1.0).contains(&p.unseen));
            let hm = harmonic_mean(p.seen, p.unseen);
            prop_assert!(p.seen.min(p.unseen) <= hm + 1e-12 && hm <= p.seen.max(p.unseen) + 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&a.auc));
    }
}
