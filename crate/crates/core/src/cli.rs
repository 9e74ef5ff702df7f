//! Command-line front end: `synth`, `train`, `eval`, `infer`, `gradcheck`
//! and `retrieve`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_dataset, synth_generate, write_dataset, Dataset, FeatureDtype, MultiLabel, PairSpace, PlantedCorrelation,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, removal_scatter, scatter_tsv, EvalReport};
use crate::losses::{check_losses, LossMode};
use crate::model::{object_probs, pair_probs, rmd, AttrTransform, Direction, Model};
use crate::numgrad::{Mode, ParamStore, Tape, Tensor};
use crate::train::{fit, load_checkpoint, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "attrsym", version, about = "Attribute-object transformations with group-axiom constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Random seed (synthetic data, initialization, shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted attribute directions.
    Synth(SynthArgs),
    /// Train a model.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Score feature vectors with a checkpoint.
    Infer(InferArgs),
    /// Finite-difference check of every loss term on a toy model.
    Gradcheck(GradcheckArgs),
    /// Edit a feature with the transformation networks and find its nearest records.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for manifest.json and its data files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub attrs: usize,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Records per pair (per object with --multi-label).
    #[arg(long, default_value_t = 40)]
    pub per_pair: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub unseen_pairs: usize,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Multi-label records with this per-attribute base rate.
    #[arg(long)]
    pub multi_label: Option<f64>,
    /// Planted correlation `a,b,share,cooccur` (repeatable).
    #[arg(long, value_parser = parse_correlation)]
    pub correlate: Vec<PlantedCorrelation>,
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    pub dtype: FeatureDtype,
}

fn parse_correlation(s: &str) -> std::result::Result<PlantedCorrelation, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, share, cooccur] = parts.as_slice() else {
        return Err("expected a,b,share,cooccur".into());
    };
    let bad = |what: &str| format!("bad {what} in `{s}`");
    Ok(PlantedCorrelation {
        a: a.trim().parse().map_err(|_| bad("attribute"))?,
        b: b.trim().parse().map_err(|_| bad("attribute"))?,
        share: share.trim().parse().map_err(|_| bad("share"))?,
        cooccur: cooccur.trim().parse().map_err(|_| bad("co-occurrence"))?,
    })
}

fn parse_dtype(s: &str) -> std::result::Result<FeatureDtype, String> {
    match s {
        "f32" => Ok(FeatureDtype::F32),
        "f64" => Ok(FeatureDtype::F64),
        other => Err(format!("unknown dtype `{other}` (f32|f64)")),
    }
}

/// Every flag except `--dataset`, `--config` and `--set` maps onto the
/// config key of the same name (dashes become underscores).
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `key = value` config file, applied before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda1: Option<String>,
    #[arg(long)]
    pub lambda2: Option<String>,
    #[arg(long)]
    pub lambda3: Option<String>,
    #[arg(long)]
    pub lambda4: Option<String>,
    #[arg(long)]
    pub lambda5: Option<String>,
    #[arg(long)]
    pub lambda6: Option<String>,
    #[arg(long)]
    pub lambda7: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub embedding_file: Option<String>,
    #[arg(long)]
    pub bn_momentum: Option<String>,
    #[arg(long)]
    pub attn_hidden: Option<String>,
    #[arg(long)]
    pub trunk_hidden: Option<String>,
    #[arg(long)]
    pub cls_hidden: Option<String>,
    #[arg(long)]
    pub distance: Option<String>,
    #[arg(long)]
    pub attr_cls_input: Option<String>,
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long)]
    pub warmup_epochs: Option<String>,
    #[arg(long)]
    pub log_interval: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
    #[arg(long)]
    pub resume: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let flags: [(&'static str, &Option<String>); 28] = [
            ("preset", &self.preset),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("mode", &self.mode),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("lambda3", &self.lambda3),
            ("lambda4", &self.lambda4),
            ("lambda5", &self.lambda5),
            ("lambda6", &self.lambda6),
            ("lambda7", &self.lambda7),
            ("margin", &self.margin),
            ("gamma", &self.gamma),
            ("embeddings", &self.embeddings),
            ("embedding_file", &self.embedding_file),
            ("bn_momentum", &self.bn_momentum),
            ("attn_hidden", &self.attn_hidden),
            ("trunk_hidden", &self.trunk_hidden),
            ("cls_hidden", &self.cls_hidden),
            ("distance", &self.distance),
            ("attr_cls_input", &self.attr_cls_input),
            ("attention", &self.attention),
            ("warmup_epochs", &self.warmup_epochs),
            ("log_interval", &self.log_interval),
            ("checkpoint_every", &self.checkpoint_every),
            ("resume", &self.resume),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    /// Config file, then the flags, then `--set`.
    pub fn to_config(&self, seed: Option<u64>) -> Result<TrainConfig> {
        // a preset flag replaces the whole config, so it cannot follow the file
        if let (Some(_), Some(p)) = (&self.config, &self.preset) {
            return Err(Error::Config(format!(
                "--preset {p} would discard --config; put `preset = {p}` at the top of the file instead"
            )));
        }
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let flag_err = |key: &str, e: Error| Error::Config(format!("--{}: {e}", key.replace('_', "-")));
        for (k, v) in self.overrides() {
            cfg.set(k, v).map_err(|e| flag_err(k, e))?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("--set {kv}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Directory for eval.json, bias_curve.tsv and corr_distance.tsv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Whitespace-separated feature vectors, one per line.
    #[arg(long)]
    pub features: PathBuf,
    /// Dataset for vocabulary names and the feasible pair space.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of consecutive seeds, starting at --seed (default 0).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// single, multi or both.
    #[arg(long, default_value = "both")]
    pub mode: String,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Query record id. Alternative to --feature.
    #[arg(long, conflicts_with = "feature")]
    pub record: Option<String>,
    /// File holding one query feature vector.
    #[arg(long)]
    pub feature: Option<PathBuf>,
    /// Attribute to remove (name or index, repeatable). Removals run first.
    #[arg(long)]
    pub remove: Vec<String>,
    /// Attribute to add (name or index, repeatable).
    #[arg(long)]
    pub add: Vec<String>,
    /// Split searched for neighbors; all records when omitted.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage or configuration, 2 data, 3 numeric.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed, out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Gradcheck(a) => gradcheck(a, cli.seed.unwrap_or(0), out),
        Command::Retrieve(a) => retrieve(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: &SynthArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        n_attrs: a.attrs,
        n_objects: a.objects,
        feature_dim: a.dim,
        per_pair_count: a.per_pair,
        noise_sigma: a.noise,
        corr_structure: a.correlate.clone(),
        multi_label: a.multi_label.map(|base_rate| MultiLabel { base_rate }),
        unseen_pairs: a.unseen_pairs,
        test_fraction: a.test_fraction,
        seed: seed.unwrap_or(SynthConfig::default().seed),
    };
    let syn = synth_generate(&cfg)?;
    let manifest = write_dataset(&a.out, &syn.dataset, a.dtype)?;
    let ds = &syn.dataset;
    let mut s = format!(
        "wrote {} ({} records, {} attributes, {} objects, dim {})\n",
        manifest.display(),
        ds.records.len(),
        ds.n_attrs(),
        ds.n_objects(),
        ds.feature_dim
    );
    for (name, idx) in &ds.splits {
        s.push_str(&format!("  {name}: {}\n", idx.len()));
    }
    emit(out, &s)
}

fn train(a: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let cfg = a.to_config(seed)?;
    let path = cfg
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("train needs --dataset (or `dataset` in the config file)".into()))?;
    let ds = load_dataset(&path)?;
    let mut res = fit(&cfg, &ds)?;
    let r = &res.report;
    let mut s = format!("trained {} epochs\n", r.epochs.len());
    let l = &r.final_losses;
    s.push_str(&format!(
        "final losses: total {:.5} sym {:.5} clo {:.5} inv {:.5} com {:.5} cls_a {:.5} cls_o {:.5} tri {:.5}\n",
        l.total, l.sym, l.clo, l.inv, l.com, l.cls_a, l.cls_o, l.tri
    ));
    if let Some(i) = &r.initial {
        let f = &r.final_measured;
        s.push_str(&format!(
            "whole train split: sym {:.5} -> {:.5}, axiom {:.5} -> {:.5}, total {:.5} -> {:.5}\n",
            i.sym,
            f.sym,
            i.axiom(),
            f.axiom(),
            i.total,
            f.total
        ));
    }
    let skipped: usize = r.epochs.iter().map(|e| e.skipped).sum();
    if skipped > 0 {
        s.push_str(&format!("records without an eligible negative: {skipped} visits\n"));
    }
    if let Some(p) = &r.checkpoint {
        s.push_str(&format!("checkpoint: {}\n", p.display()));
    }
    if let Some(e) = &r.eval {
        s.push('\n');
        s.push_str(&e.render());
    }
    if let Some(dir) = &cfg.out_dir {
        if let Some(e) = &r.eval {
            write_eval_files(e, dir)?;
        }
        if ds.is_multi_attr() {
            let corr = ds.train_correlation()?;
            let pts = removal_scatter(&mut res.model, &mut res.store, &ds, "test", &corr)?;
            write_file(&dir.join("corr_distance.tsv"), &scatter_tsv(&pts))?;
        }
    }
    emit(out, &s)
}

fn write_eval_files(e: &EvalReport, dir: &Path) -> Result<()> {
    if let Some(tsv) = e.bias_curve_tsv() {
        write_file(&dir.join("bias_curve.tsv"), &tsv)?;
    }
    let json = serde_json::to_string_pretty(e).map_err(|x| Error::Contract(format!("eval report: {x}")))?;
    write_file(&dir.join("eval.json"), &(json + "\n"))
}

fn load_pair(checkpoint: &Path, dataset: &Path) -> Result<(Model, ParamStore, Dataset)> {
    let ds = load_dataset(dataset)?;
    let (model, store, _) = load_checkpoint(checkpoint, &ds)?;
    Ok((model, store, ds))
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (mut model, mut store, ds) = load_pair(&a.checkpoint, &a.dataset)?;
    let report = evaluate(&mut model, &mut store, &ds, &a.split, a.gamma)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_eval_files(&report, dir)?;
        if ds.is_multi_attr() {
            let corr = ds.train_correlation()?;
            let pts = removal_scatter(&mut model, &mut store, &ds, &a.split, &corr)?;
            write_file(&dir.join("corr_distance.tsv"), &scatter_tsv(&pts))?;
        }
    }
    if a.json {
        let json = serde_json::to_string_pretty(&report).map_err(|x| Error::Contract(format!("eval report: {x}")))?;
        emit(out, &(json + "\n"))
    } else {
        emit(out, &report.render())
    }
}

/// Rows of whitespace-separated numbers; blank lines and `#` comments skipped.
pub fn read_feature_rows(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::load(path, format!("line {}: {e}", i + 1)))?;
        if row.len() != dim {
            return Err(Error::load(
                path,
                format!("line {}: {} values, model expects {dim}", i + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::load(path, "no feature vectors"));
    }
    Ok(rows)
}

fn all_pairs(n: usize, m: usize) -> Result<PairSpace> {
    let pairs = (0..n).flat_map(|a| (0..m).map(move |o| (a, o))).collect();
    PairSpace::new(pairs, &Default::default(), &Default::default(), n, m)
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    if a.top_k == 0 {
        return Err(Error::Config("--top-k must be at least 1".into()));
    }
    let (mut model, mut store, ds) = match &a.dataset {
        Some(d) => {
            let (m, s, ds) = load_pair(&a.checkpoint, d)?;
            (m, s, Some(ds))
        }
        None => {
            let ck = crate::numgrad::Checkpoint::<f64>::load(&a.checkpoint)?;
            let mut store = ParamStore::new(ck.seed);
            let model = Model::from_meta(&ck.meta, &mut store).map_err(|e| Error::load(&a.checkpoint, e.to_string()))?;
            ck.restore_into(&mut store, &a.checkpoint)?;
            (model, store, None)
        }
    };
    let (n, m) = (model.config().n_attrs, model.config().n_objects);
    let features = read_feature_rows(&a.features, model.config().feature_dim)?;
    model.set_mode(Mode::Eval);
    let scores = rmd(&mut model, &mut store, &features, a.gamma)?;
    let p_o = object_probs(&model, &store, &features)?;
    let space = match ds.as_ref().map(Dataset::pair_space) {
        Some(Ok(s)) => s,
        _ => all_pairs(n, m)?,
    };
    let attr_name = |i: usize| ds.as_ref().map_or(i.to_string(), |d| d.attr_vocab[i].clone());
    let obj_name = |i: usize| ds.as_ref().map_or(i.to_string(), |d| d.object_vocab[i].clone());
    let mut s = String::new();
    for (i, (sc, po)) in scores.iter().zip(&p_o).enumerate() {
        s.push_str(&format!("feature {i}\n{:<16} {:>12} {:>10} {:>8}\n", "attribute", "d", "p", "present"));
        let probs = sc.probs();
        let present = sc.present();
        for k in 0..n {
            s.push_str(&format!(
                "{:<16} {:>12.6} {:>10.6} {:>8}\n",
                attr_name(k),
                sc.d[k],
                probs[k],
                if present[k] { "yes" } else { "no" }
            ));
        }
        let pp = pair_probs(&probs, po, &space)?;
        let mut order: Vec<usize> = (0..pp.len()).collect();
        order.sort_by(|&x, &y| pp[y].total_cmp(&pp[x]).then(x.cmp(&y)));
        s.push_str("top pairs:");
        for &k in order.iter().take(a.top_k) {
            let (at, ob) = space.pairs[k];
            s.push_str(&format!(" {} {} ({:.6})", attr_name(at), obj_name(ob), pp[k]));
        }
        s.push_str("\n\n");
    }
    emit(out, &s)
}

fn gradcheck(a: &GradcheckArgs, first_seed: u64, out: &mut dyn Write) -> Result<()> {
    let modes = match a.mode.as_str() {
        "both" => vec![LossMode::Single, LossMode::Multi],
        m => vec![m.parse()?],
    };
    let mut s = format!("{:<7} {:<5} {:<9} {:>12} {:>6} {:>5}\n", "mode", "seed", "term", "max_rel_err", "kinks", "ok");
    let mut failed = Vec::new();
    for mode in modes {
        for seed in first_seed..first_seed + a.seeds {
            for c in check_losses(seed, mode, a.eps, a.tol)? {
                let mode_name = format!("{mode:?}").to_lowercase();
                s.push_str(&format!(
                    "{:<7} {:<5} {:<9} {:>12.3e} {:>6} {:>5}\n",
                    mode_name,
                    seed,
                    c.term,
                    c.report.max_rel_err,
                    c.report.kink_count(),
                    if c.report.passed { "yes" } else { "NO" }
                ));
                if !c.report.passed {
                    failed.push(format!("{mode_name}/{seed}/{}", c.term));
                }
            }
        }
    }
    emit(out, &s)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn resolve_attr(ds: &Dataset, token: &str) -> Result<usize> {
    if let Some(i) = ds.attr_vocab.iter().position(|t| t == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if i < ds.n_attrs() => Ok(i),
        _ => Err(Error::Config(format!("unknown attribute `{token}`"))),
    }
}

/// Applies the removals with the decoupling network, then the additions with
/// the coupling network, and ranks records by L2 distance to the result.
pub fn edit_and_rank(
    model: &mut Model,
    store: &mut ParamStore,
    query: &[f64],
    remove: &[usize],
    add: &[usize],
    candidates: &[(usize, &[f64])],
    k: usize,
) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let edited = (|| {
        let mut tape = Tape::new();
        let mut f = tape.input(Tensor::from_rows(&[query.to_vec()])?);
        for &a in remove {
            f = model.transform(&mut tape, store, Direction::Decouple, f, &[a])?;
        }
        for &a in add {
            f = model.transform(&mut tape, store, Direction::Couple, f, &[a])?;
        }
        Ok::<_, Error>(tape.value(f).data().to_vec())
    })();
    model.set_mode(prev);
    let edited = edited?;
    let mut ranked: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&(i, x)| {
            let d2: f64 = x.iter().zip(&edited).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, d2.sqrt())
        })
        .collect();
    ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    ranked.truncate(k);
    Ok((edited, ranked))
}

fn retrieve(a: &RetrieveArgs, out: &mut dyn Write) -> Result<()> {
    let (mut model, mut store, ds) = load_pair(&a.checkpoint, &a.dataset)?;
    let query = match (&a.record, &a.feature) {
        (Some(id), _) => ds
            .records
            .iter()
            .find(|r| &r.id == id)
            .map(|r| r.feature.clone())
            .ok_or_else(|| Error::Config(format!("no record `{id}` in {}", a.dataset.display())))?,
        (None, Some(p)) => {
            let mut rows = read_feature_rows(p, ds.feature_dim)?;
            if rows.len() != 1 {
                return Err(Error::load(p, format!("expected one feature vector, found {}", rows.len())));
            }
            rows.remove(0)
        }
        (None, None) => return Err(Error::Config("retrieve needs --record or --feature".into())),
    };
    let remove = a.remove.iter().map(|t| resolve_attr(&ds, t)).collect::<Result<Vec<_>>>()?;
    let add = a.add.iter().map(|t| resolve_attr(&ds, t)).collect::<Result<Vec<_>>>()?;
    let pool: Vec<usize> = match &a.split {
        Some(s) => ds.split_indices(s)?.to_vec(),
        None => (0..ds.records.len()).collect(),
    };
    let candidates: Vec<(usize, &[f64])> = pool.iter().map(|&i| (i, ds.records[i].feature.as_slice())).collect();
    let (_, ranked) = edit_and_rank(&mut model, &mut store, &query, &remove, &add, &candidates, a.top_k)?;
    let mut s = format!("{:<4} {:<16} {:<16} {:<24} {:>10}\n", "rank", "record", "object", "attributes", "distance");
    for (rank, (i, d)) in ranked.iter().enumerate() {
        let r = &ds.records[*i];
        let attrs: Vec<&str> = r.attrs.iter().map(|&x| ds.attr_vocab[x].as_str()).collect();
        s.push_str(&format!(
            "{:<4} {:<16} {:<16} {:<24} {:>10.6}\n",
            rank + 1,
            r.id,
            ds.object_vocab[r.object],
            attrs.join(","),
            d
        ));
    }
    emit(out, &s)
}
