//! Training objectives: symmetry, group axioms, semantic-consistency
//! classification, RMD triplets and their weighted total.

mod check;
mod multi;
mod terms;

pub use check::{check_losses, term_selectors, toy_problem, TermCheck};

pub use terms::{
    attr_corr_triplet, attr_corr_triplet_value, axiom_losses, classification_losses, cross_entropy, hinge,
    multi_sym_triplet, multi_sym_triplet_value, rmd_triplet, rmd_triplet_value, symmetry_loss, transform_terms,
    AxiomVars, ClsTargets, TransformTerms,
};

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{rmd_vars, Model};
use crate::numgrad::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Single,
    Multi,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(Error::Config(format!("unknown mode `{other}` (single|multi)"))),
        }
    }
}

/// λ1..λ7 and the triplet margin.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub sym: f64,
    pub axiom: f64,
    pub cls_a: f64,
    pub cls_o: f64,
    pub tri: f64,
    pub tri_sym: Option<f64>,
    pub tri_corr: Option<f64>,
    pub alpha: f64,
    pub mode: LossMode,
}

impl LossWeights {
    /// Synthetic-data defaults for single-attribute training.
    pub fn single() -> Self {
        Self {
            sym: 1.0,
            axiom: 0.1,
            cls_a: 1.0,
            cls_o: 1.0,
            tri: 1.0,
            tri_sym: None,
            tri_corr: None,
            alpha: 0.5,
            mode: LossMode::Single,
        }
    }

    /// Synthetic-data defaults for multi-attribute training. λ6 is large
    /// because the correlation gaps scaling the multi-attribute symmetry
    /// triplet are small next to the all-attribute symmetry term.
    pub fn multi() -> Self {
        Self {
            tri_sym: Some(10.0),
            tri_corr: Some(0.1),
            mode: LossMode::Multi,
            ..Self::single()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sym,
            self.axiom,
            self.cls_a,
            self.cls_o,
            self.tri,
            self.tri_sym.unwrap_or(0.0),
            self.tri_corr.unwrap_or(0.0),
        ];
        if all.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("triplet margin must be positive, got {}", self.alpha)));
        }
        if self.mode == LossMode::Multi && (self.tri_sym.is_none() || self.tri_corr.is_none()) {
            return Err(Error::Config("multi mode needs lambda6 and lambda7".into()));
        }
        Ok(())
    }

    /// Weighted sum of a breakdown's components.
    ///
    /// In multi mode the composite `tri + λ6·tri_sym + λ7·tri_corr` fills the
    /// triplet slot and is then scaled by λ5.
    pub fn total(&self, b: &LossBreakdown) -> Result<f64> {
        let tri = match self.mode {
            LossMode::Single => b.tri,
            LossMode::Multi => {
                let (Some(ts), Some(tc), Some(ws), Some(wc)) = (b.tri_sym, b.tri_corr, self.tri_sym, self.tri_corr) else {
                    return Err(Error::Contract("multi-mode total needs tri_sym and tri_corr".into()));
                };
                b.tri + ws * ts + wc * tc
            }
        };
        Ok(self.sym * b.sym
            + self.axiom * (b.clo + b.inv + b.com)
            + self.cls_a * b.cls_a
            + self.cls_o * b.cls_o
            + self.tri * tri)
    }
}

/// Loss component values. `tri_sym`/`tri_corr` exist only in multi mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub sym: f64,
    pub clo: f64,
    pub inv: f64,
    pub com: f64,
    pub cls_a: f64,
    pub cls_o: f64,
    pub tri: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tri_sym: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tri_corr: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn axiom(&self) -> f64 {
        self.clo + self.inv + self.com
    }

    /// Componentwise `self += w · other`, for running means.
    pub fn accumulate(&mut self, other: &Self, w: f64) {
        self.sym += w * other.sym;
        self.clo += w * other.clo;
        self.inv += w * other.inv;
        self.com += w * other.com;
        self.cls_a += w * other.cls_a;
        self.cls_o += w * other.cls_o;
        self.tri += w * other.tri;
        if let Some(x) = other.tri_sym {
            *self.tri_sym.get_or_insert(0.0) += w * x;
        }
        if let Some(x) = other.tri_corr {
            *self.tri_corr.get_or_insert(0.0) += w * x;
        }
        self.total += w * other.total;
    }
}

/// One (attribute it has, attribute it lacks) pair for a batch row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub row: usize,
    pub has: usize,
    pub not: usize,
}

/// A (strongly related, neutral) non-existing attribute pair for a batch row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymPair {
    pub row: usize,
    pub strong: usize,
    pub neutral: usize,
    pub c_strong: f64,
    pub c_neutral: f64,
}

/// Three distinct attributes with `c_ij = corr(i, j)` and `c_ik = corr(i, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrTriple {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c_ij: f64,
    pub c_ik: f64,
}

/// Everything one optimization step needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub objects: Vec<usize>,
    /// Attribute set of every row.
    pub sets: Vec<Vec<usize>>,
    /// Rows usable for the symmetry, axiom and attribute-classification terms.
    pub pairs: Vec<PairSample>,
    pub sym_pairs: Vec<SymPair>,
    pub triples: Vec<CorrTriple>,
}

/// Loss components on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub sym: Var,
    pub clo: Var,
    pub inv: Var,
    pub com: Var,
    pub cls_a: Var,
    pub cls_o: Var,
    pub tri: Var,
    pub tri_sym: Option<Var>,
    pub tri_corr: Option<Var>,
}

impl LossTerms {
    /// Weighted total on the tape, nested the same way as [`LossWeights::total`].
    pub fn total(&self, tape: &mut Tape, w: &LossWeights) -> Result<Var> {
        let mut tri = self.tri;
        if w.mode == LossMode::Multi {
            let (Some(ts), Some(tc), Some(ws), Some(wc)) = (self.tri_sym, self.tri_corr, w.tri_sym, w.tri_corr) else {
                return Err(Error::Contract("multi-mode total needs tri_sym and tri_corr".into()));
            };
            let ts = tape.scale(ts, ws);
            let tc = tape.scale(tc, wc);
            tri = tape.add(tri, ts)?;
            tri = tape.add(tri, tc)?;
        }
        let axiom = tape.add(self.clo, self.inv)?;
        let axiom = tape.add(axiom, self.com)?;
        let parts = [
            (self.sym, w.sym),
            (axiom, w.axiom),
            (self.cls_a, w.cls_a),
            (self.cls_o, w.cls_o),
            (tri, w.tri),
        ];
        let mut total = tape.constant(0.0);
        for (v, k) in parts {
            let s = tape.scale(v, k);
            total = tape.add(total, s)?;
        }
        Ok(total)
    }

    pub fn breakdown(&self, tape: &Tape, total: Var) -> LossBreakdown {
        LossBreakdown {
            sym: tape.scalar(self.sym),
            clo: tape.scalar(self.clo),
            inv: tape.scalar(self.inv),
            com: tape.scalar(self.com),
            cls_a: tape.scalar(self.cls_a),
            cls_o: tape.scalar(self.cls_o),
            tri: tape.scalar(self.tri),
            tri_sym: self.tri_sym.map(|v| tape.scalar(v)),
            tri_corr: self.tri_corr.map(|v| tape.scalar(v)),
            total: tape.scalar(total),
        }
    }
}

/// All loss components for one batch, each averaged over the batch.
///
/// Single mode applies the symmetry, axiom and attribute-classification
/// terms to the sampled `(has, not)` pair of each row. Multi mode applies
/// them to every attribute, reusing the transforms of the RMD pass, and uses
/// the sampled pair for commutativity only.
pub fn compute_losses(
    model: &mut Model,
    tape: &mut Tape,
    store: &mut ParamStore,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let b = batch.features.rows();
    if batch.objects.len() != b || batch.sets.len() != b {
        return Err(Error::shape("batch", &[b], &[batch.objects.len(), batch.sets.len()]));
    }
    let f = tape.input(batch.features.clone());
    let rmd = rmd_vars(model, tape, store, f)?;
    let tri = rmd_triplet(tape, rmd.d, &batch.sets, weights.alpha)?;
    match weights.mode {
        LossMode::Single => single_terms(model, tape, store, batch, f, tri),
        LossMode::Multi => multi::multi_terms(model, tape, store, batch, weights, f, &rmd, tri),
    }
}

fn single_terms(
    model: &mut Model,
    tape: &mut Tape,
    store: &mut ParamStore,
    batch: &Batch,
    f: Var,
    tri: Var,
) -> Result<LossTerms> {
    let zero = tape.constant(0.0);
    let (sym, axioms, cls_a, cls_o) = if batch.pairs.is_empty() {
        let z = model.obj_logits(tape, store, f)?;
        let cls_o = cross_entropy(tape, z, &batch.objects)?;
        (zero, AxiomVars { clo: zero, inv: zero, com: zero }, zero, cls_o)
    } else {
        let rows: Vec<usize> = batch.pairs.iter().map(|p| p.row).collect();
        let has: Vec<usize> = batch.pairs.iter().map(|p| p.has).collect();
        let not: Vec<usize> = batch.pairs.iter().map(|p| p.not).collect();
        let fp = tape.gather(f, &rows)?;
        let t = transform_terms(model, tape, store, fp, &has, &not)?;
        let targets = ClsTargets::Single { has: &has, not: &not };
        let (cls_a, cls_o) = classification_losses(model, tape, store, f, &batch.objects, fp, &rows, &t, targets)?;
        (t.sym, t.axioms, cls_a, cls_o)
    };
    Ok(LossTerms {
        sym,
        clo: axioms.clo,
        inv: axioms.inv,
        com: axioms.com,
        cls_a,
        cls_o,
        tri,
        tri_sym: None,
        tri_corr: None,
    })
}
