use std::fmt::Write;

use serde::Serialize;

use crate::data::{corr_to_set, CorrelationMatrix, Dataset};
use crate::error::{Error, Result};
use crate::model::{object_probs, pair_probs, rmd, Model};
use crate::numgrad::{Mode, ParamStore};

use super::{czsl_topk, generalized_czsl, mauc, topk_accuracy, GeneralizedReport, MaucReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzslReport {
    /// Top-1, 2, 3 over the full feasible pair space, on unseen-pair instances.
    pub top: Vec<f64>,
    pub n_instances: usize,
    pub n_pairs: usize,
    /// Top-1 accuracy of a uniform guess over the feasible pairs.
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub n_instances: usize,
    pub gamma: f64,
    /// Top-1, 2, 3 attribute accuracy by RMD ranking (single-attribute data).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_top: Option<Vec<f64>>,
    /// Multi-label attribute recognition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_mauc: Option<MaucReport>,
    pub obj_top1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub czsl: Option<CzslReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalized: Option<GeneralizedReport>,
}

/// Scores every record of `split` and computes all metrics that apply.
pub fn evaluate(model: &mut Model, store: &mut ParamStore, ds: &Dataset, split: &str, gamma: f64) -> Result<EvalReport> {
    let records = ds.split(split)?;
    if records.is_empty() {
        return Err(Error::Config(format!("split `{split}` is empty")));
    }
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let features: Vec<Vec<f64>> = records.iter().map(|r| r.feature.clone()).collect();
    let scores = rmd(model, store, &features, gamma);
    let p_o = object_probs(model, store, &features);
    model.set_mode(prev);
    let (scores, p_o) = (scores?, p_o?);

    let objects: Vec<usize> = records.iter().map(|r| r.object).collect();
    let obj_top1 = topk_accuracy(&p_o, &objects, 1)?;
    let d: Vec<Vec<f64>> = scores.iter().map(|s| s.d.clone()).collect();
    let n = ds.n_attrs();

    let mut report = EvalReport {
        split: split.to_string(),
        n_instances: records.len(),
        gamma,
        attr_top: None,
        attr_mauc: None,
        obj_top1,
        czsl: None,
        generalized: None,
    };

    if ds.is_multi_attr() {
        let labels: Vec<Vec<bool>> = records.iter().map(|r| (0..n).map(|a| r.has_attr(a)).collect()).collect();
        report.attr_mauc = Some(mauc(&d, &labels)?);
        return Ok(report);
    }

    let attrs: Vec<usize> = records.iter().map(|r| r.pair().map(|p| p.0)).collect::<Result<_>>()?;
    report.attr_top = Some((1..=3.min(n)).map(|k| topk_accuracy(&d, &attrs, k)).collect::<Result<_>>()?);

    let Ok(space) = ds.pair_space() else {
        return Ok(report);
    };
    let truth: Vec<(usize, usize)> = records.iter().map(|r| r.pair()).collect::<Result<_>>()?;
    let pair_scores: Vec<Vec<f64>> = scores
        .iter()
        .zip(&p_o)
        .map(|(s, po)| pair_probs(&s.probs(), po, &space))
        .collect::<Result<_>>()?;
    let unseen_rows: Vec<usize> = (0..truth.len())
        .filter(|&i| space.index_of(truth[i].0, truth[i].1).is_some_and(|k| space.unseen[k]))
        .collect();
    if !unseen_rows.is_empty() {
        let ps: Vec<Vec<f64>> = unseen_rows.iter().map(|&i| pair_scores[i].clone()).collect();
        let tr: Vec<(usize, usize)> = unseen_rows.iter().map(|&i| truth[i]).collect();
        report.czsl = Some(CzslReport {
            top: (1..=3.min(space.len()))
                .map(|k| czsl_topk(&ps, &tr, &space, k))
                .collect::<Result<_>>()?,
            n_instances: unseen_rows.len(),
            n_pairs: space.len(),
            chance: 1.0 / space.len() as f64,
        });
        if unseen_rows.len() < truth.len() {
            report.generalized = Some(generalized_czsl(&pair_scores, &truth, &space, None)?);
        }
    }
    Ok(report)
}

impl EvalReport {
    /// Plain-text tables: attribute/object accuracy, CZSL top-k and the
    /// generalized seen/unseen summary.
    pub fn render(&self) -> String {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut out = String::new();
        let _ = writeln!(out, "split {} ({} instances, gamma {})", self.split, self.n_instances, self.gamma);
        if let Some(top) = &self.attr_top {
            let _ = writeln!(out, "\n{:<10} {:>8} {:>8}", "", "Attr", "Obj");
            let _ = writeln!(out, "{:<10} {:>8} {:>8}", "Top-1", pct(top[0]), pct(self.obj_top1));
        }
        if let Some(m) = &self.attr_mauc {
            let _ = writeln!(out, "\nmAUC {}    object top-1 {}", pct(m.mauc), pct(self.obj_top1));
        }
        if let Some(c) = &self.czsl {
            let _ = writeln!(out, "\nCZSL ({} unseen instances, {} pairs)", c.n_instances, c.n_pairs);
            let _ = writeln!(out, "{:>8} {:>8} {:>8}", "Top-1", "Top-2", "Top-3");
            let cols: Vec<String> = c.top.iter().map(|&x| format!("{:>8}", pct(x))).collect();
            let _ = writeln!(out, "{}", cols.join(" "));
        }
        if let Some(g) = &self.generalized {
            let _ = writeln!(out, "\n{:>8} {:>8} {:>8} {:>8} {:>8}", "Seen", "Unseen", "HM", "Closed", "AUC");
            let _ = writeln!(
                out,
                "{:>8} {:>8} {:>8} {:>8} {:>8}",
                pct(g.best_seen),
                pct(g.best_unseen),
                pct(g.best_hm),
                pct(g.closed),
                pct(g.auc)
            );
        }
        out
    }

    /// Bias sweep as TSV (`bias`, `seen`, `unseen`), if generalized metrics ran.
    pub fn bias_curve_tsv(&self) -> Option<String> {
        let g = self.generalized.as_ref()?;
        let mut s = String::from("bias\tseen\tunseen\n");
        for p in &g.curve {
            let _ = writeln!(s, "{}\t{}\t{}", p.bias, p.seen, p.unseen);
        }
        Some(s)
    }
}

/// `(corr(a, X), d−_a)` for every record of `split` and every attribute `a`
/// it lacks, where `X` is the record's attribute set.
pub fn removal_scatter(
    model: &mut Model,
    store: &mut ParamStore,
    ds: &Dataset,
    split: &str,
    corr: &CorrelationMatrix,
) -> Result<Vec<(f64, f64)>> {
    let records = ds.split(split)?;
    let features: Vec<Vec<f64>> = records.iter().map(|r| r.feature.clone()).collect();
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let scores = rmd(model, store, &features, 1.0);
    model.set_mode(prev);
    let mut out = Vec::new();
    for (r, s) in records.iter().zip(scores?) {
        for a in (0..ds.n_attrs()).filter(|&a| !r.has_attr(a)) {
            out.push((corr_to_set(corr, a, &r.attrs), s.d_minus[a]));
        }
    }
    Ok(out)
}

pub fn scatter_tsv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("corr\td_minus\n");
    for (c, d) in points {
        let _ = writeln!(s, "{c}\t{d}");
    }
    s
}
