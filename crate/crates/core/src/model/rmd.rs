use crate::data::PairSpace;
use crate::error::{Error, Result};
use crate::numgrad::{ParamStore, Tape, Tensor, Var};

use super::{AttrTransform, Direction, Model};

/// Distance between paired rows, returned as a `[rows, 1]` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    L2,
    L1,
    /// `1 − cos(a, b)`.
    Cosine,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown distance `{other}`"))),
        }
    }
}

impl Distance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::L2 => "l2",
            Self::L1 => "l1",
            Self::Cosine => "cosine",
        }
    }

    pub fn apply(self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        match self {
            Self::L2 => {
                let d = tape.sub(a, b)?;
                Ok(tape.row_norm(d))
            }
            Self::L1 => {
                let d = tape.sub(a, b)?;
                let d = tape.abs(d);
                Ok(tape.row_sum(d))
            }
            Self::Cosine => {
                let ab = tape.mul(a, b)?;
                let dot = tape.row_sum(ab);
                let na = tape.row_norm(a);
                let nb = tape.row_norm(b);
                let den = tape.mul(na, nb)?;
                let den = tape.offset(den, 1e-12);
                let cos = tape.div(dot, den)?;
                let neg = tape.scale(cos, -1.0);
                Ok(tape.offset(neg, 1.0))
            }
        }
    }
}

/// Relative moving distances on the tape, each `[B, n]`, plus the
/// `[B·n, dim]` rows they were computed from (row `b·n + a` pairs feature `b`
/// with attribute `a`).
#[derive(Debug, Clone, Copy)]
pub struct RmdVars {
    pub d_plus: Var,
    pub d_minus: Var,
    pub d: Var,
    pub rows: Var,
    pub plus: Var,
    pub minus: Var,
}

/// Pairs every row of `f` with every attribute in one batched pass per direction.
pub fn rmd_vars<M: AttrTransform + ?Sized>(net: &mut M, tape: &mut Tape, store: &mut ParamStore, f: Var) -> Result<RmdVars> {
    let b = tape.value(f).rows();
    let n = net.n_attrs();
    let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, n)).collect();
    let attrs: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let fr = tape.gather(f, &rep)?;
    let metric = net.distance();
    let plus = net.transform(tape, store, Direction::Couple, fr, &attrs)?;
    let minus = net.transform(tape, store, Direction::Decouple, fr, &attrs)?;
    let dp = metric.apply(tape, fr, plus)?;
    let d_plus = tape.reshape(dp, &[b, n])?;
    let dm = metric.apply(tape, fr, minus)?;
    let d_minus = tape.reshape(dm, &[b, n])?;
    let d = tape.sub(d_minus, d_plus)?;
    Ok(RmdVars {
        d_plus,
        d_minus,
        d,
        rows: fr,
        plus,
        minus,
    })
}

/// Per-instance distances and the scale applied before the sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct RmdScores {
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
    pub d: Vec<f64>,
    pub gamma: f64,
}

impl RmdScores {
    pub fn probs(&self) -> Vec<f64> {
        attr_prob(&self.d, self.gamma)
    }

    /// Attribute present iff `d ≥ 0`.
    pub fn present(&self) -> Vec<bool> {
        self.d.iter().map(|&d| d >= 0.0).collect()
    }

    /// Attributes by decreasing `d`, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.d.len()).collect();
        idx.sort_by(|&a, &b| self.d[b].total_cmp(&self.d[a]));
        idx
    }
}

pub fn attr_prob(d: &[f64], gamma: f64) -> Vec<f64> {
    d.iter().map(|&x| 1.0 / (1.0 + (-gamma * x).exp())).collect()
}

const CHUNK_ROWS: usize = 4096;

fn feature_chunks(features: &[Vec<f64>], per_row: usize) -> impl Iterator<Item = &[Vec<f64>]> {
    features.chunks((CHUNK_ROWS / per_row.max(1)).max(1))
}

/// RMD scores for every feature. Results do not depend on how features are
/// grouped as long as normalization runs on running statistics.
pub fn rmd<M: AttrTransform + ?Sized>(
    net: &mut M,
    store: &mut ParamStore,
    features: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<RmdScores>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let n = net.n_attrs();
    let mut out = Vec::with_capacity(features.len());
    for chunk in feature_chunks(features, n) {
        let mut tape = Tape::new();
        let f = tape.input(Tensor::from_rows(chunk)?);
        let v = rmd_vars(net, &mut tape, store, f)?;
        let (dp, dm, d) = (tape.value(v.d_plus), tape.value(v.d_minus), tape.value(v.d));
        for i in 0..chunk.len() {
            out.push(RmdScores {
                d_plus: dp.row(i).to_vec(),
                d_minus: dm.row(i).to_vec(),
                d: d.row(i).to_vec(),
                gamma,
            });
        }
    }
    Ok(out)
}

/// Softmax over object logits for every feature.
pub fn object_probs(model: &Model, store: &ParamStore, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(features.len());
    for chunk in feature_chunks(features, 1) {
        let mut tape = Tape::new();
        let f = tape.input(Tensor::from_rows(chunk)?);
        let z = model.obj_logits(&mut tape, store, f)?;
        let p = tape.softmax(z);
        let pv = tape.value(p);
        out.extend((0..chunk.len()).map(|i| pv.row(i).to_vec()));
    }
    Ok(out)
}

/// `p_a[attr] · p_o[object]` for every pair in the feasible space, in space order.
pub fn pair_probs(p_a: &[f64], p_o: &[f64], space: &PairSpace) -> Result<Vec<f64>> {
    if space.is_empty() {
        return Err(Error::Contract("pair space is empty".into()));
    }
    if p_a.len() != space.n_attrs || p_o.len() != space.n_objects {
        return Err(Error::shape("pair_probs", &[p_a.len(), p_o.len()], &[space.n_attrs, space.n_objects]));
    }
    Ok(space.pairs.iter().map(|&(a, o)| p_a[a] * p_o[o]).collect())
}
