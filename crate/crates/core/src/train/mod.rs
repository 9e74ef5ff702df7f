//! Batch assembly, the epoch loop, checkpointing and the training report.

mod config;
mod sampling;

pub use config::{TrainConfig, KEYS, PRESETS};
pub use sampling::{percentile_buckets, rank_non_existing, sample_multi, sample_triple, MultiSample, NegativeSampler};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{corr_to_set, load_attr_embeddings, CorrelationMatrix, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::losses::{compute_losses, Batch, CorrTriple, LossBreakdown, LossMode, LossWeights, PairSample, SymPair};
use crate::model::{Model, ModelConfig};
use crate::numgrad::{Checkpoint, ParamStore, Sgd, Tape, Tensor};

/// RNG for one epoch. Stream 0 is reserved for measuring the initial losses.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub batches: usize,
    /// Records that got a sampled attribute pair.
    pub used: usize,
    /// Records without an eligible negative, left out of the pair terms.
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_score: Option<f64>,
}

/// Holds what stays fixed across epochs: the split, the negative sampler and
/// the attribute correlations.
#[derive(Debug)]
pub struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: TrainConfig,
    train_idx: Vec<usize>,
    sampler: NegativeSampler,
    corr: Option<CorrelationMatrix>,
    last_good: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// `cfg.lr = 0` is accepted here and runs frozen epochs.
    pub fn new(ds: &'a Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mut check = cfg.clone();
        if check.lr == 0.0 {
            check.lr = 1.0;
        }
        check.validate()?;
        let train_idx = ds.split_indices("train")?.to_vec();
        if train_idx.len() < 2 {
            return Err(Error::Config("train split needs at least 2 records".into()));
        }
        if ds.records.iter().any(|r| r.feature.len() != ds.feature_dim) {
            return Err(Error::Contract("record feature length differs from feature_dim".into()));
        }
        let corr = match cfg.weights.mode {
            LossMode::Multi => {
                if ds.n_attrs() < 3 {
                    return Err(Error::Config(format!(
                        "multi mode needs at least 3 attributes, dataset has {}",
                        ds.n_attrs()
                    )));
                }
                Some(ds.train_correlation()?)
            }
            LossMode::Single => None,
        };
        Ok(Self {
            ds,
            sampler: NegativeSampler::new(ds, &train_idx),
            train_idx,
            cfg: cfg.clone(),
            corr,
            last_good: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Checkpoint named in the error if a later epoch diverges.
    pub fn set_last_good(&mut self, path: Option<PathBuf>) {
        self.last_good = path;
    }

    /// Shuffled batches of record indices. A trailing single record joins the
    /// previous batch since batch normalization needs two rows.
    pub fn batches<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        self.batches_of(rng, self.cfg.batch_size)
    }

    fn batches_of<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<Vec<usize>> {
        let mut order = self.train_idx.clone();
        order.shuffle(rng);
        let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
            let tail = out.pop().unwrap_or_default();
            out.last_mut().expect("two batches").extend(tail);
        }
        out
    }

    /// Builds a loss batch and reports `(used, skipped)` records.
    pub fn assemble<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<(Batch, usize, usize)> {
        let ds = self.ds;
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| ds.records[i].feature.clone()).collect();
        let mut batch = Batch {
            features: Tensor::from_rows(&rows)?,
            objects: indices.iter().map(|&i| ds.records[i].object).collect(),
            sets: indices.iter().map(|&i| ds.records[i].attrs.clone()).collect(),
            pairs: Vec::new(),
            sym_pairs: Vec::new(),
            triples: Vec::new(),
        };
        let n = ds.n_attrs();
        let (mut used, mut skipped) = (0, 0);
        for (row, &i) in indices.iter().enumerate() {
            let set = &ds.records[i].attrs;
            let pair = match self.cfg.weights.mode {
                LossMode::Single => self.sampler.sample(i, rng).and_then(|neg| {
                    let has = *set.choose(rng)?;
                    let not = *ds.records[neg].attrs.choose(rng)?;
                    Some(PairSample { row, has, not })
                }),
                LossMode::Multi => {
                    let absent: Vec<usize> = (0..n).filter(|a| !set.contains(a)).collect();
                    match (set.choose(rng), absent.choose(rng)) {
                        (Some(&has), Some(&not)) => Some(PairSample { row, has, not }),
                        _ => None,
                    }
                }
            };
            match pair {
                Some(p) => {
                    batch.pairs.push(p);
                    used += 1;
                }
                None => skipped += 1,
            }
            if let Some(c) = &self.corr {
                let s = sample_multi(set, c, rng)?;
                batch.sym_pairs.extend(s.sym_pairs.iter().map(|&(strong, neutral)| SymPair {
                    row,
                    strong,
                    neutral,
                    c_strong: corr_to_set(c, strong, set),
                    c_neutral: corr_to_set(c, neutral, set),
                }));
                let (ti, tj, tk) = s.triple;
                batch.triples.push(CorrTriple {
                    i: ti,
                    j: tj,
                    k: tk,
                    c_ij: c.get(ti, tj),
                    c_ik: c.get(ti, tk),
                });
            }
        }
        Ok((batch, used, skipped))
    }

    fn weights_for(&self, epoch: usize) -> LossWeights {
        let mut w = self.cfg.weights.clone();
        if epoch < self.cfg.warmup_epochs {
            w.sym = 0.0;
            w.axiom = 0.0;
        }
        w
    }

    /// One pass over the train split. `epoch` is 0-based and selects the RNG
    /// stream and the warm-up phase. Returns batch-size weighted means.
    pub fn train_epoch(&self, model: &mut Model, store: &mut ParamStore, epoch: usize) -> Result<EpochStats> {
        let weights = self.weights_for(epoch);
        let optimizer = (self.cfg.lr > 0.0).then(|| Sgd::new(self.cfg.lr, self.cfg.momentum)).transpose()?;
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let batches = self.batches(&mut rng);
        self.run(model, store, &weights, &mut rng, batches, epoch + 1, optimizer.as_ref())
    }

    /// Mean losses over one minibatch pass without touching `model` or `store`.
    pub fn measure(&self, model: &Model, store: &ParamStore) -> Result<LossBreakdown> {
        self.measure_batched(model, store, self.cfg.batch_size)
    }

    /// Losses of the whole train split as a single batch, so normalization
    /// uses split-wide statistics. Leaves `model` and `store` untouched.
    pub fn measure_full(&self, model: &Model, store: &ParamStore) -> Result<LossBreakdown> {
        self.measure_batched(model, store, self.train_idx.len())
    }

    fn measure_batched(&self, model: &Model, store: &ParamStore, batch_size: usize) -> Result<LossBreakdown> {
        let mut model = model.clone();
        let mut store = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let weights = self.weights_for(0);
        let batches = self.batches_of(&mut rng, batch_size);
        Ok(self.run(&mut model, &mut store, &weights, &mut rng, batches, 0, None)?.losses)
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        model: &mut Model,
        store: &mut ParamStore,
        weights: &LossWeights,
        rng: &mut ChaCha8Rng,
        batches: Vec<Vec<usize>>,
        epoch: usize,
        optimizer: Option<&Sgd>,
    ) -> Result<EpochStats> {
        let mut stats = EpochStats {
            epoch,
            losses: LossBreakdown::default(),
            batches: 0,
            used: 0,
            skipped: 0,
            val_score: None,
        };
        let total_rows: usize = batches.iter().map(Vec::len).sum();
        for (k, indices) in batches.iter().enumerate() {
            let (batch, used, skipped) = self.assemble(indices, rng)?;
            stats.used += used;
            stats.skipped += skipped;
            let diverged = |what: String| {
                let last = match &self.last_good {
                    Some(p) => format!("last good checkpoint: {}", p.display()),
                    None => "no checkpoint written yet".to_string(),
                };
                Error::Numeric(format!("{what} at epoch {epoch}, batch {}; {last}", k + 1))
            };
            let mut tape = Tape::new();
            let terms = match compute_losses(model, &mut tape, store, &batch, weights) {
                Err(Error::Numeric(what)) => return Err(diverged(what)),
                other => other?,
            };
            let total = terms.total(&mut tape, weights)?;
            if !tape.scalar(total).is_finite() {
                return Err(diverged("training loss".into()));
            }
            stats.losses.accumulate(&terms.breakdown(&tape, total), indices.len() as f64 / total_rows as f64);
            stats.batches += 1;
            if let Some(opt) = optimizer {
                tape.backward(total, store)?;
                opt.step(store)?;
            }
        }
        Ok(stats)
    }
}

/// Builds the model described by `cfg` for `ds`, registering its parameters
/// in `store`.
pub fn build_model(cfg: &TrainConfig, ds: &Dataset, store: &mut ParamStore) -> Result<Model> {
    let emb = load_attr_embeddings(cfg.embedding_file.as_deref(), &ds.attr_vocab, cfg.embeddings)?;
    let mcfg = ModelConfig {
        attn_hidden: cfg.attn_hidden,
        trunk_hidden: cfg.trunk_hidden,
        cls_hidden: cfg.cls_hidden,
        bn_momentum: cfg.bn_momentum,
        attention: cfg.attention,
        attr_cls_input: cfg.attr_cls_input,
        distance: cfg.distance,
        ..ModelConfig::new(ds.feature_dim, ds.n_attrs(), ds.n_objects())
    };
    Model::new(mcfg, &emb, store)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Whole-split losses at initialization, absent when resuming.
    pub initial: Option<LossBreakdown>,
    pub epochs: Vec<EpochStats>,
    /// Mean over the last epoch's minibatches.
    pub final_losses: LossBreakdown,
    /// Whole-split losses after training, comparable with `initial`.
    pub final_measured: LossBreakdown,
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub eval: Option<EvalReport>,
}

#[derive(Debug)]
pub struct FitOutput {
    pub model: Model,
    pub store: ParamStore,
    pub report: TrainReport,
}

/// Meta key holding the number of completed epochs.
pub const EPOCHS_DONE: &str = "epochs_done";

pub fn save_checkpoint(model: &Model, store: &ParamStore, ds: &Dataset, epochs_done: usize, path: &Path) -> Result<()> {
    let mut meta = model.meta(Some(ds));
    meta.insert(EPOCHS_DONE.into(), epochs_done.to_string());
    Checkpoint::from_store(store, meta).save(path)
}

/// Rebuilds a model and its parameters from a checkpoint, checking it against `ds`.
pub fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<(Model, ParamStore, BTreeMap<String, String>)> {
    let ck = Checkpoint::<f64>::load(path)?;
    Model::check_dataset(&ck.meta, ds, path)?;
    let mut store = ParamStore::new(ck.seed);
    let model = Model::from_meta(&ck.meta, &mut store).map_err(|e| Error::load(path, e.to_string()))?;
    ck.restore_into(&mut store, path)?;
    Ok((model, store, ck.meta))
}

fn val_score(r: &EvalReport) -> f64 {
    let attr = match (&r.attr_top, &r.attr_mauc) {
        (Some(top), _) => top[0],
        (None, Some(m)) => m.mauc,
        (None, None) => 0.0,
    };
    (attr + r.obj_top1) / 2.0
}

/// Trains for `cfg.epochs` epochs (counting any resumed ones) and evaluates
/// on the test split.
///
/// With `out_dir` set it writes `last.ckpt` every epoch, `best.ckpt` when the
/// dataset has a `val` split, `epoch-<k>.ckpt` per `checkpoint_every`,
/// `report.jsonl`, `loss_curve.tsv` and `config.txt`.
pub fn fit(cfg: &TrainConfig, ds: &Dataset) -> Result<FitOutput> {
    cfg.validate()?;
    let mut trainer = Trainer::new(ds, cfg)?;
    let (mut model, mut store, start) = match &cfg.resume {
        Some(path) => {
            let (model, store, meta) = load_checkpoint(path, ds)?;
            let done = meta
                .get(EPOCHS_DONE)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::load(path, format!("checkpoint has no `{EPOCHS_DONE}`")))?;
            trainer.set_last_good(Some(path.clone()));
            (model, store, done)
        }
        None => {
            let mut store = ParamStore::new(cfg.seed);
            let model = build_model(cfg, ds, &mut store)?;
            (model, store, 0)
        }
    };
    let out = cfg.out_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.txt");
        fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
    }
    let initial = match cfg.resume {
        Some(_) => None,
        None => Some(trainer.measure_full(&model, &store)?),
    };
    let has_val = ds.splits.get("val").is_some_and(|v| !v.is_empty());
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut checkpoint = None;
    for epoch in start..cfg.epochs {
        let mut stats = trainer.train_epoch(&mut model, &mut store, epoch)?;
        if has_val {
            let score = val_score(&evaluate(&mut model, &mut store, ds, "val", cfg.gamma)?);
            stats.val_score = Some(score);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, epoch + 1));
                if let Some(dir) = out {
                    let p = dir.join("best.ckpt");
                    save_checkpoint(&model, &store, ds, epoch + 1, &p)?;
                    checkpoint = Some(p);
                }
            }
        }
        if let Some(dir) = out {
            let p = dir.join("last.ckpt");
            save_checkpoint(&model, &store, ds, epoch + 1, &p)?;
            trainer.set_last_good(Some(p.clone()));
            if !has_val {
                checkpoint = Some(p);
            }
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, &store, ds, epoch + 1, &dir.join(format!("epoch-{}.ckpt", epoch + 1)))?;
            }
        }
        if cfg.log_interval > 0 && ((epoch + 1) % cfg.log_interval == 0 || epoch + 1 == cfg.epochs) {
            log::info!(
                "epoch {} total {:.5} sym {:.5} axiom {:.5} cls_a {:.5} cls_o {:.5} tri {:.5}",
                stats.epoch,
                stats.losses.total,
                stats.losses.sym,
                stats.losses.axiom(),
                stats.losses.cls_a,
                stats.losses.cls_o,
                stats.losses.tri
            );
        }
        epochs.push(stats);
    }
    let total_skipped: usize = epochs.iter().map(|e| e.skipped).sum();
    if total_skipped > 0 {
        log::warn!("{total_skipped} record visits had no eligible negative and skipped the pair terms");
    }
    let eval = match ds.splits.get("test") {
        Some(t) if !t.is_empty() => Some(evaluate(&mut model, &mut store, ds, "test", cfg.gamma)?),
        _ => None,
    };
    let final_losses = epochs.last().map(|e| e.losses.clone()).unwrap_or_default();
    let final_measured = trainer.measure_full(&model, &store)?;
    let report = TrainReport {
        initial,
        epochs,
        final_losses,
        final_measured,
        best_epoch: best.map(|(_, e)| e),
        checkpoint,
        eval,
    };
    if let Some(dir) = out {
        write_report(&report, dir)?;
    }
    Ok(FitOutput { model, store, report })
}

/// `report.jsonl` (one line per epoch, then a summary line) and `loss_curve.tsv`.
pub fn write_report(report: &TrainReport, dir: &Path) -> Result<()> {
    let mut lines = String::new();
    for e in &report.epochs {
        lines.push_str(&json_line(e)?);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        summary: bool,
        initial: &'a Option<LossBreakdown>,
        final_losses: &'a LossBreakdown,
        final_measured: &'a LossBreakdown,
        best_epoch: Option<usize>,
        checkpoint: &'a Option<PathBuf>,
        eval: &'a Option<EvalReport>,
    }
    let summary = Summary {
        summary: true,
        initial: &report.initial,
        final_losses: &report.final_losses,
        final_measured: &report.final_measured,
        best_epoch: report.best_epoch,
        checkpoint: &report.checkpoint,
        eval: &report.eval,
    };
    lines.push_str(&json_line(&summary)?);
    let p = dir.join("report.jsonl");
    fs::write(&p, lines).map_err(|e| Error::io(&p, e))?;

    let mut tsv = String::from("epoch\ttotal\tsym\tclo\tinv\tcom\tcls_a\tcls_o\ttri\ttri_sym\ttri_corr\n");
    for e in &report.epochs {
        let l = &e.losses;
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.epoch,
            l.total,
            l.sym,
            l.clo,
            l.inv,
            l.com,
            l.cls_a,
            l.cls_o,
            l.tri,
            l.tri_sym.map_or("-".into(), |v| v.to_string()),
            l.tri_corr.map_or("-".into(), |v| v.to_string()),
        );
    }
    let p = dir.join("loss_curve.tsv");
    fs::write(&p, tsv).map_err(|e| Error::io(&p, e))
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Contract(format!("report serialization: {e}")))
}
