//! Finite-difference checks of every loss term on a small random problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::AttributeEmbedding;
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::numgrad::{finite_diff_check_many, GradCheckReport, ParamStore, Tape, Tensor, Var};

use super::{compute_losses, Batch, CorrTriple, LossMode, LossTerms, LossWeights, PairSample, SymPair};

/// Model with feature dim 8, 4 attributes and 3 objects, plus a batch of 4
/// random features with valid labels, pairs and triples for `mode`.
pub fn toy_problem(seed: u64, mode: LossMode) -> Result<(Model, ParamStore, Batch, LossWeights)> {
    let (dim, n, m, b) = (8, 4, 3, 4);
    let mut store = ParamStore::new(seed);
    let model = Model::new(ModelConfig::new(dim, n, m), &AttributeEmbedding::one_hot(n), &mut store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let objects: Vec<usize> = (0..b).map(|_| rng.random_range(0..m)).collect();
    let sets: Vec<Vec<usize>> = match mode {
        LossMode::Single => (0..b).map(|r| vec![(r + seed as usize) % n]).collect(),
        LossMode::Multi => vec![vec![0, 1], vec![2], vec![1, 3], vec![0, 2, 3]],
    };
    let pairs = sets
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let absent: Vec<usize> = (0..n).filter(|a| !s.contains(a)).collect();
            PairSample {
                row,
                has: s[rng.random_range(0..s.len())],
                not: absent[rng.random_range(0..absent.len())],
            }
        })
        .collect();
    let mut corr = || rng.random_range(-1.0..1.0);
    let (sym_pairs, triples, weights) = match mode {
        LossMode::Single => (Vec::new(), Vec::new(), LossWeights::single()),
        LossMode::Multi => (
            vec![
                SymPair { row: 0, strong: 2, neutral: 3, c_strong: corr(), c_neutral: corr() },
                SymPair { row: 1, strong: 0, neutral: 3, c_strong: corr(), c_neutral: corr() },
                SymPair { row: 2, strong: 2, neutral: 0, c_strong: corr(), c_neutral: corr() },
            ],
            vec![
                CorrTriple { i: 0, j: 1, k: 2, c_ij: corr(), c_ik: corr() },
                CorrTriple { i: 3, j: 2, k: 0, c_ij: corr(), c_ik: corr() },
            ],
            LossWeights::multi(),
        ),
    };
    let batch = Batch {
        features: Tensor::from_rows(&rows)?,
        objects,
        sets,
        pairs,
        sym_pairs,
        triples,
    };
    Ok((model, store, batch, weights))
}

#[derive(Debug, Clone)]
pub struct TermCheck {
    pub term: &'static str,
    pub report: GradCheckReport,
}

type Pick = fn(&LossTerms, &mut Tape, &LossWeights) -> Result<Var>;

/// Term names and selectors checked in `mode`; `total` last.
pub fn term_selectors(mode: LossMode) -> Vec<(&'static str, Pick)> {
    let mut out: Vec<(&'static str, Pick)> = vec![
        ("sym", |t, _, _| Ok(t.sym)),
        ("clo", |t, _, _| Ok(t.clo)),
        ("inv", |t, _, _| Ok(t.inv)),
        ("com", |t, _, _| Ok(t.com)),
        ("cls_a", |t, _, _| Ok(t.cls_a)),
        ("cls_o", |t, _, _| Ok(t.cls_o)),
        ("tri", |t, _, _| Ok(t.tri)),
    ];
    if mode == LossMode::Multi {
        out.push(("tri_sym", |t, tape, _| Ok(t.tri_sym.unwrap_or_else(|| tape.constant(0.0)))));
        out.push(("tri_corr", |t, tape, _| Ok(t.tri_corr.unwrap_or_else(|| tape.constant(0.0)))));
    }
    out.push(("total", |t, tape, w| t.total(tape, w)));
    out
}

/// Runs the gradient check for every term of `mode` on `toy_problem(seed)`.
pub fn check_losses(seed: u64, mode: LossMode, eps: f64, tol: f64) -> Result<Vec<TermCheck>> {
    let (mut model, mut store, batch, weights) = toy_problem(seed, mode)?;
    let selectors = term_selectors(mode);
    let reports = finite_diff_check_many(
        &mut store,
        |tape, store| {
            let terms = compute_losses(&mut model, tape, store, &batch, &weights)?;
            selectors.iter().map(|(_, pick)| pick(&terms, tape, &weights)).collect()
        },
        eps,
        tol,
    )?;
    Ok(selectors
        .iter()
        .zip(reports)
        .map(|(&(term, _), report)| TermCheck { term, report })
        .collect())
}
