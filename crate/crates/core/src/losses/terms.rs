use crate::error::{Error, Result};
use crate::model::{AttrTransform, Direction, Distance, Model};
use crate::numgrad::{ParamStore, Tape, Tensor, Var};

use super::{CorrTriple, SymPair};

pub fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Mean cross-entropy of softmax(logits) against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let per_row = tape.softmax_xent(logits, targets)?;
    Ok(tape.mean(per_row))
}

fn check_pairs(has: &[usize], not: &[usize]) -> Result<()> {
    if has.len() != not.len() {
        return Err(Error::shape("attribute pairs", &[has.len()], &[not.len()]));
    }
    if let Some(i) = (0..has.len()).find(|&i| has[i] == not[i]) {
        return Err(Error::Contract(format!(
            "row {i}: existing and non-existing attribute are both {}",
            has[i]
        )));
    }
    Ok(())
}

fn mean_dist(tape: &mut Tape, metric: Distance, a: Var, b: Var) -> Result<Var> {
    let d = metric.apply(tape, a, b)?;
    Ok(tape.mean(d))
}

#[derive(Debug, Clone, Copy)]
pub struct AxiomVars {
    pub clo: Var,
    pub inv: Var,
    pub com: Var,
}

/// Symmetry and axiom terms plus the four first-level transforms they share.
#[derive(Debug, Clone, Copy)]
pub struct TransformTerms {
    pub sym: Var,
    pub axioms: AxiomVars,
    /// `f·T+(has)`
    pub p_has: Var,
    /// `f·T+(not)`
    pub p_not: Var,
    /// `f·T−(has)`
    pub m_has: Var,
    /// `f·T−(not)`
    pub m_not: Var,
}

/// `‖f − f·T+(has)‖ + ‖f − f·T−(not)‖`, averaged over rows.
pub fn symmetry_loss<M: AttrTransform + ?Sized>(
    net: &mut M,
    tape: &mut Tape,
    store: &mut ParamStore,
    f: Var,
    has: &[usize],
    not: &[usize],
) -> Result<Var> {
    check_pairs(has, not)?;
    let metric = net.distance();
    let p_has = net.transform(tape, store, Direction::Couple, f, has)?;
    let m_not = net.transform(tape, store, Direction::Decouple, f, not)?;
    let a = mean_dist(tape, metric, f, p_has)?;
    let b = mean_dist(tape, metric, f, m_not)?;
    tape.add(a, b)
}

/// Closure, invertibility and commutativity terms.
pub fn axiom_losses<M: AttrTransform + ?Sized>(
    net: &mut M,
    tape: &mut Tape,
    store: &mut ParamStore,
    f: Var,
    has: &[usize],
    not: &[usize],
) -> Result<AxiomVars> {
    Ok(transform_terms(net, tape, store, f, has, not)?.axioms)
}

pub fn transform_terms<M: AttrTransform + ?Sized>(
    net: &mut M,
    tape: &mut Tape,
    store: &mut ParamStore,
    f: Var,
    has: &[usize],
    not: &[usize],
) -> Result<TransformTerms> {
    use Direction::{Couple, Decouple};
    check_pairs(has, not)?;
    let metric = net.distance();
    let p_has = net.transform(tape, store, Couple, f, has)?;
    let p_not = net.transform(tape, store, Couple, f, not)?;
    let m_has = net.transform(tape, store, Decouple, f, has)?;
    let m_not = net.transform(tape, store, Decouple, f, not)?;

    let s1 = mean_dist(tape, metric, f, p_has)?;
    let s2 = mean_dist(tape, metric, f, m_not)?;
    let sym = tape.add(s1, s2)?;

    let c1 = net.transform(tape, store, Decouple, p_has, has)?;
    let c1 = mean_dist(tape, metric, c1, m_has)?;
    let c2 = net.transform(tape, store, Couple, m_not, not)?;
    let c2 = mean_dist(tape, metric, c2, p_not)?;
    let clo = tape.add(c1, c2)?;

    let i1 = net.transform(tape, store, Decouple, p_not, not)?;
    let i1 = mean_dist(tape, metric, i1, f)?;
    let i2 = net.transform(tape, store, Couple, m_has, has)?;
    let i2 = mean_dist(tape, metric, i2, f)?;
    let inv = tape.add(i1, i2)?;

    let x = net.transform(tape, store, Decouple, p_has, not)?;
    let y = net.transform(tape, store, Couple, m_not, has)?;
    let com = mean_dist(tape, metric, x, y)?;

    Ok(TransformTerms {
        sym,
        axioms: AxiomVars { clo, inv, com },
        p_has,
        p_not,
        m_has,
        m_not,
    })
}

/// Attribute labels of the transformed embeddings.
#[derive(Debug, Clone)]
pub enum ClsTargets<'a> {
    /// `f·T+(has)` shows `has`, `f·T+(not)` shows `not`.
    Single { has: &'a [usize], not: &'a [usize] },
    /// `f·T+(not)` shows `X ∪ {not}`, `f·T−(has)` shows `X \ {has}`.
    Multi {
        sets: Vec<&'a [usize]>,
        has: &'a [usize],
        not: &'a [usize],
        n_attrs: usize,
    },
}

fn multi_hot(sets: &[&[usize]], edit: &[usize], add: bool, n: usize) -> Result<Tensor> {
    let mut data = vec![0.0; sets.len() * n];
    for (r, (set, &e)) in sets.iter().zip(edit).enumerate() {
        for &a in set.iter() {
            data[r * n + a] = 1.0;
        }
        data[r * n + e] = if add { 1.0 } else { 0.0 };
    }
    Tensor::new(vec![sets.len(), n], data)
}

/// `(cls_a, cls_o)`.
///
/// `f`/`objects` cover the whole batch; `fp` holds the rows `rows` that the
/// transforms in `t` were applied to.
#[allow(clippy::too_many_arguments)]
pub fn classification_losses(
    model: &Model,
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    objects: &[usize],
    fp: Var,
    rows: &[usize],
    t: &TransformTerms,
    targets: ClsTargets<'_>,
) -> Result<(Var, Var)> {
    let obj_rows: Vec<usize> = rows.iter().map(|&r| objects[r]).collect();
    let z = model.obj_logits(tape, store, f)?;
    let mut cls_o = cross_entropy(tape, z, objects)?;
    for out in [t.p_has, t.p_not, t.m_has, t.m_not] {
        let z = model.obj_logits(tape, store, out)?;
        let ce = cross_entropy(tape, z, &obj_rows)?;
        cls_o = tape.add(cls_o, ce)?;
    }
    let cls_o = tape.scale(cls_o, 0.2);

    let cls_a = match targets {
        ClsTargets::Single { has, not } => {
            let z1 = model.attr_logits(tape, store, fp, t.p_has)?;
            let a = cross_entropy(tape, z1, has)?;
            let z2 = model.attr_logits(tape, store, fp, t.p_not)?;
            let b = cross_entropy(tape, z2, not)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        }
        ClsTargets::Multi { sets, has, not, n_attrs } => {
            let z1 = model.attr_logits(tape, store, fp, t.p_not)?;
            let a = tape.sigmoid_bce(z1, multi_hot(&sets, not, true, n_attrs)?)?;
            let z2 = model.attr_logits(tape, store, fp, t.m_has)?;
            let b = tape.sigmoid_bce(z2, multi_hot(&sets, has, false, n_attrs)?)?;
            let a = tape.mean(a);
            let b = tape.mean(b);
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5 / n_attrs as f64)
        }
    };
    Ok((cls_a, cls_o))
}

/// `Σ_{i∈X}[d+ − d− + α]₊ + Σ_{j∉X}[d− − d+ + α]₊` for one instance.
pub fn rmd_triplet_value(d_plus: &[f64], d_minus: &[f64], set: &[usize], alpha: f64) -> f64 {
    (0..d_plus.len())
        .map(|i| {
            if set.contains(&i) {
                hinge(d_plus[i] - d_minus[i] + alpha)
            } else {
                hinge(d_minus[i] - d_plus[i] + alpha)
            }
        })
        .sum()
}

/// Batch mean of [`rmd_triplet_value`], given `d = d− − d+` of shape `[B, n]`.
pub fn rmd_triplet(tape: &mut Tape, d: Var, sets: &[Vec<usize>], alpha: f64) -> Result<Var> {
    let dv = tape.value(d);
    let (b, n) = (dv.rows(), dv.cols());
    if sets.len() != b {
        return Err(Error::shape("rmd_triplet", dv.shape(), &[sets.len()]));
    }
    let mut sign = vec![1.0; b * n];
    for (r, set) in sets.iter().enumerate() {
        for &a in set {
            if a >= n {
                return Err(Error::Contract(format!("attribute {a} out of {n}")));
            }
            sign[r * n + a] = -1.0;
        }
    }
    let s = tape.input(Tensor::new(vec![b, n], sign)?);
    let x = tape.mul(s, d)?;
    let x = tape.offset(x, alpha);
    let h = tape.relu(x);
    let total = tape.sum(h);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// `[(c_i − c_j)(d_j − d_i) + α]₊`.
pub fn multi_sym_triplet_value(c_i: f64, c_j: f64, d_minus_i: f64, d_minus_j: f64, alpha: f64) -> f64 {
    hinge((c_i - c_j) * (d_minus_j - d_minus_i) + alpha)
}

/// Averages [`multi_sym_triplet_value`] over each row's pairs, then over rows
/// that have pairs. `d_minus` is `[B, n]`.
pub fn multi_sym_triplet(
    tape: &mut Tape,
    d_minus: Var,
    pairs: &[SymPair],
    b: usize,
    n: usize,
    alpha: f64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let mut per_row = vec![0usize; b];
    for p in pairs {
        if p.row >= b || p.strong >= n || p.neutral >= n {
            return Err(Error::Contract(format!("symmetry pair {p:?} outside batch {b} x {n}")));
        }
        per_row[p.row] += 1;
    }
    let rows_used = per_row.iter().filter(|&&c| c > 0).count() as f64;
    let flat = tape.reshape(d_minus, &[b * n, 1])?;
    let di = tape.gather(flat, &pairs.iter().map(|p| p.row * n + p.strong).collect::<Vec<_>>())?;
    let dj = tape.gather(flat, &pairs.iter().map(|p| p.row * n + p.neutral).collect::<Vec<_>>())?;
    let w = Tensor::new(vec![pairs.len(), 1], pairs.iter().map(|p| p.c_strong - p.c_neutral).collect())?;
    let avg = Tensor::new(
        vec![pairs.len(), 1],
        pairs.iter().map(|p| 1.0 / (per_row[p.row] as f64 * rows_used)).collect(),
    )?;
    let w = tape.input(w);
    let avg = tape.input(avg);
    let diff = tape.sub(dj, di)?;
    let x = tape.mul(w, diff)?;
    let x = tape.offset(x, alpha);
    let h = tape.relu(x);
    let h = tape.mul(h, avg)?;
    Ok(tape.sum(h))
}

/// `[(c_ij − c_ik)(d+_ij − d+_ik) + α]₊ + [(c_ij − c_ik)(d−_ij − d−_ik) + α]₊`.
pub fn attr_corr_triplet_value(c_ij: f64, c_ik: f64, dists: [f64; 4], alpha: f64) -> f64 {
    let [dp_ij, dp_ik, dm_ij, dm_ik] = dists;
    let w = c_ij - c_ik;
    hinge(w * (dp_ij - dp_ik) + alpha) + hinge(w * (dm_ij - dm_ik) + alpha)
}

/// Mean of [`attr_corr_triplet_value`] over triples, with distances between
/// rows of the coupling (`att_plus`) and decoupling (`att_minus`) attention tables.
pub fn attr_corr_triplet(
    tape: &mut Tape,
    att_plus: Var,
    att_minus: Var,
    triples: &[CorrTriple],
    metric: Distance,
    alpha: f64,
) -> Result<Var> {
    if triples.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let n = tape.value(att_plus).rows();
    for t in triples {
        if t.i == t.j || t.i == t.k || t.j == t.k {
            return Err(Error::Contract(format!("attributes {}, {}, {} are not distinct", t.i, t.j, t.k)));
        }
        if t.i.max(t.j).max(t.k) >= n {
            return Err(Error::Contract(format!("triple ({}, {}, {}) out of {n} attributes", t.i, t.j, t.k)));
        }
    }
    let pick = |f: fn(&CorrTriple) -> usize| triples.iter().map(f).collect::<Vec<_>>();
    let (ii, jj, kk) = (pick(|t| t.i), pick(|t| t.j), pick(|t| t.k));
    let w = tape.input(Tensor::new(
        vec![triples.len(), 1],
        triples.iter().map(|t| t.c_ij - t.c_ik).collect(),
    )?);
    let mut total = tape.constant(0.0);
    for table in [att_plus, att_minus] {
        let ai = tape.gather(table, &ii)?;
        let aj = tape.gather(table, &jj)?;
        let ak = tape.gather(table, &kk)?;
        let dij = metric.apply(tape, ai, aj)?;
        let dik = metric.apply(tape, ai, ak)?;
        let diff = tape.sub(dij, dik)?;
        let x = tape.mul(w, diff)?;
        let x = tape.offset(x, alpha);
        let h = tape.relu(x);
        let s = tape.sum(h);
        total = tape.add(total, s)?;
    }
    Ok(tape.scale(total, 1.0 / triples.len() as f64))
}
