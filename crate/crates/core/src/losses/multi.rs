use crate::error::{Error, Result};
use crate::model::{AttrTransform, Direction, Model, RmdVars};
use crate::numgrad::{ParamStore, Tape, Tensor, Var};

use super::{attr_corr_triplet, cross_entropy, multi_sym_triplet, Batch, LossTerms, LossWeights};

/// `Σ x ⊙ w` for a constant weight matrix.
fn weighted_sum(tape: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
    let w = tape.input(w.clone());
    let xw = tape.mul(x, w)?;
    Ok(tape.sum(xw))
}

/// Column of per-row distances reshaped to `[B, n]`.
fn dist_grid(tape: &mut Tape, model: &Model, a: Var, b: Var, shape: [usize; 2]) -> Result<Var> {
    let d = model.distance().apply(tape, a, b)?;
    tape.reshape(d, &shape)
}

/// Row weights averaging over present (or absent) attributes, then over the batch.
fn membership_weights(sets: &[Vec<usize>], n: usize, present: bool) -> Result<Tensor> {
    let b = sets.len() as f64;
    let mut w = vec![0.0; sets.len() * n];
    for (r, set) in sets.iter().enumerate() {
        let count = if present { set.len() } else { n - set.len() };
        for a in 0..n {
            if set.contains(&a) == present {
                w[r * n + a] = 1.0 / (count as f64 * b);
            }
        }
    }
    Tensor::new(vec![sets.len(), n], w)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn multi_terms(
    model: &mut Model,
    tape: &mut Tape,
    store: &mut ParamStore,
    batch: &Batch,
    weights: &LossWeights,
    f: Var,
    rmd: &RmdVars,
    tri: Var,
) -> Result<LossTerms> {
    use Direction::{Couple, Decouple};
    let n = model.config().n_attrs;
    let b = batch.features.rows();
    let shape = [b, n];
    for set in &batch.sets {
        if let Some(&a) = set.iter().find(|&&a| a >= n) {
            return Err(Error::Contract(format!("attribute {a} out of {n}")));
        }
    }
    let w_has = membership_weights(&batch.sets, n, true)?;
    let w_not = membership_weights(&batch.sets, n, false)?;

    // symmetry: adding what it has, removing what it lacks
    let s1 = weighted_sum(tape, rmd.d_plus, &w_has)?;
    let s2 = weighted_sum(tape, rmd.d_minus, &w_not)?;
    let sym = tape.add(s1, s2)?;

    // closure and invertibility over every attribute
    let attrs: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let pm = model.transform(tape, store, Decouple, rmd.plus, &attrs)?;
    let mp = model.transform(tape, store, Couple, rmd.minus, &attrs)?;
    let c1 = dist_grid(tape, model, pm, rmd.minus, shape)?;
    let c1 = weighted_sum(tape, c1, &w_has)?;
    let c2 = dist_grid(tape, model, mp, rmd.plus, shape)?;
    let c2 = weighted_sum(tape, c2, &w_not)?;
    let clo = tape.add(c1, c2)?;
    let i1 = dist_grid(tape, model, pm, rmd.rows, shape)?;
    let i1 = weighted_sum(tape, i1, &w_not)?;
    let i2 = dist_grid(tape, model, mp, rmd.rows, shape)?;
    let i2 = weighted_sum(tape, i2, &w_has)?;
    let inv = tape.add(i1, i2)?;

    // commutativity on the sampled pair of each row
    let com = if batch.pairs.len() >= 2 {
        let p_has: Vec<usize> = batch.pairs.iter().map(|p| p.row * n + p.has).collect();
        let m_not: Vec<usize> = batch.pairs.iter().map(|p| p.row * n + p.not).collect();
        let has: Vec<usize> = batch.pairs.iter().map(|p| p.has).collect();
        let not: Vec<usize> = batch.pairs.iter().map(|p| p.not).collect();
        let ph = tape.gather(rmd.plus, &p_has)?;
        let mn = tape.gather(rmd.minus, &m_not)?;
        let x = model.transform(tape, store, Decouple, ph, &not)?;
        let y = model.transform(tape, store, Couple, mn, &has)?;
        let d = model.distance().apply(tape, x, y)?;
        tape.mean(d)
    } else {
        tape.constant(0.0)
    };

    // attribute classification: T+(f, j) shows X ∪ {j}, T−(f, i) shows X \ {i}
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for (r, set) in batch.sets.iter().enumerate() {
        for a in 0..n {
            if set.contains(&a) {
                removed.push((r, a));
            } else {
                added.push((r, a));
            }
        }
    }
    let mut cls_a = tape.constant(0.0);
    let mut groups = 0.0f64;
    for (rows, src, add) in [(&added, rmd.plus, true), (&removed, rmd.minus, false)] {
        if rows.is_empty() {
            continue;
        }
        let idx: Vec<usize> = rows.iter().map(|&(r, a)| r * n + a).collect();
        let mut target = vec![0.0; rows.len() * n];
        for (k, &(r, a)) in rows.iter().enumerate() {
            for &x in &batch.sets[r] {
                target[k * n + x] = 1.0;
            }
            target[k * n + a] = if add { 1.0 } else { 0.0 };
        }
        let y = tape.gather(src, &idx)?;
        let orig = tape.gather(rmd.rows, &idx)?;
        let z = model.attr_logits(tape, store, orig, y)?;
        let bce = tape.sigmoid_bce(z, Tensor::new(vec![rows.len(), n], target)?)?;
        let bce = tape.mean(bce);
        cls_a = tape.add(cls_a, bce)?;
        groups += 1.0;
    }
    let cls_a = tape.scale(cls_a, 1.0 / (groups.max(1.0) * n as f64));

    // object classification on inputs and every transformed output
    let rep_objects: Vec<usize> = batch.objects.iter().flat_map(|&o| std::iter::repeat_n(o, n)).collect();
    let z = model.obj_logits(tape, store, f)?;
    let mut cls_o = cross_entropy(tape, z, &batch.objects)?;
    for out in [rmd.plus, rmd.minus] {
        let z = model.obj_logits(tape, store, out)?;
        let ce = cross_entropy(tape, z, &rep_objects)?;
        cls_o = tape.add(cls_o, ce)?;
    }
    let cls_o = tape.scale(cls_o, 1.0 / 3.0);

    let tri_sym = multi_sym_triplet(tape, rmd.d_minus, &batch.sym_pairs, b, n, weights.alpha)?;
    let tri_corr = if batch.triples.is_empty() {
        tape.constant(0.0)
    } else {
        let plus = model.attention(tape, store, Couple)?;
        let minus = model.attention(tape, store, Decouple)?;
        attr_corr_triplet(tape, plus, minus, &batch.triples, model.distance(), weights.alpha)?
    };
    Ok(LossTerms {
        sym,
        clo,
        inv,
        com,
        cls_a,
        cls_o,
        tri,
        tri_sym: Some(tri_sym),
        tri_corr: Some(tri_corr),
    })
}
