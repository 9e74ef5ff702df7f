//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! # comment
//! preset = ut-zappos
//! lr = 1e-4
//! lambda5 = 0.5
//! ```
//!
//! Keys are applied in file order, so a `preset` line should come first.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::EmbeddingSource;
use crate::error::{Error, Result};
use crate::losses::{LossMode, LossWeights};
use crate::model::{AttrClsInput, Distance};
use crate::numgrad::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    /// Scale applied to RMD before the sigmoid.
    pub gamma: f64,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub embeddings: EmbeddingSource,
    pub embedding_file: Option<PathBuf>,
    pub bn_momentum: f64,
    pub attn_hidden: usize,
    pub trunk_hidden: usize,
    pub cls_hidden: usize,
    pub distance: Distance,
    pub attr_cls_input: AttrClsInput,
    pub attention: Activation,
    /// Epochs trained with only the classification and triplet terms before
    /// switching on the symmetry and axiom terms.
    pub warmup_epochs: usize,
    pub log_interval: usize,
    pub out_dir: Option<PathBuf>,
    /// Also write `epoch-<k>.ckpt` every this many epochs (0: never).
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.0,
            batch_size: 32,
            epochs: 100,
            weights: LossWeights::single(),
            gamma: 1.0,
            seed: 7,
            dataset: None,
            embeddings: EmbeddingSource::OneHot,
            embedding_file: None,
            bn_momentum: 0.9,
            attn_hidden: 0,
            trunk_hidden: 0,
            cls_hidden: 0,
            distance: Distance::L2,
            attr_cls_input: AttrClsInput::Transformed,
            attention: Activation::Sigmoid,
            warmup_epochs: 0,
            log_interval: 10,
            out_dir: None,
            checkpoint_every: 0,
            resume: None,
        }
    }
}

pub const PRESETS: &[&str] = &[
    "synthetic",
    "mit-states",
    "mit-states-generalized",
    "ut-zappos",
    "ut-zappos-generalized",
    "apy",
    "sun",
];

pub const KEYS: &[&str] = &[
    "preset",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "mode",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "lambda5",
    "lambda6",
    "lambda7",
    "margin",
    "gamma",
    "seed",
    "dataset",
    "embeddings",
    "embedding_file",
    "bn_momentum",
    "attn_hidden",
    "trunk_hidden",
    "cls_hidden",
    "distance",
    "attr_cls_input",
    "attention",
    "warmup_epochs",
    "log_interval",
    "out_dir",
    "checkpoint_every",
    "resume",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Per-dataset settings. Real-data presets use the published learning
    /// rates, batch sizes, epochs, loss weights, margins and hidden widths.
    pub fn preset(name: &str) -> Result<Self> {
        #[allow(clippy::type_complexity)]
        let (lr, batch, epochs, l, margin, hidden): (f64, usize, usize, [f64; 7], f64, (usize, usize)) = match name {
            "synthetic" => return Ok(Self::default()),
            "mit-states" => (5e-4, 512, 320, [5e-2, 1e-2, 1.0, 1e-2, 3e-2, 0.0, 0.0], 0.5, (512, 768)),
            "mit-states-generalized" => (3e-4, 512, 1000, [2e-2, 2e-2, 1.0, 1e-2, 1.0, 0.0, 0.0], 0.3, (512, 768)),
            "ut-zappos" => (1e-4, 256, 600, [1e-2, 3e-2, 1.0, 5e-1, 5e-1, 0.0, 0.0], 0.5, (512, 768)),
            "ut-zappos-generalized" => (1e-3, 512, 290, [2e-2, 1e-2, 1.0, 1e-2, 1.0, 0.0, 0.0], 0.5, (512, 768)),
            "apy" => (3e-3, 128, 177, [5e-2, 1e-3, 1.0, 5e-2, 1.0, 5e-2, 1.0], 0.5, (512, 256)),
            "sun" => (5e-3, 128, 95, [8e-3, 1e-3, 1.0, 3e-1, 5e-2, 6e-2, 6e-1], 0.5, (512, 1536)),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let multi = matches!(name, "apy" | "sun");
        Ok(Self {
            lr,
            batch_size: batch,
            epochs,
            weights: LossWeights {
                sym: l[0],
                axiom: l[1],
                cls_a: l[2],
                cls_o: l[3],
                tri: l[4],
                tri_sym: multi.then_some(l[5]),
                tri_corr: multi.then_some(l[6]),
                alpha: margin,
                mode: if multi { LossMode::Multi } else { LossMode::Single },
            },
            attn_hidden: hidden.0,
            trunk_hidden: hidden.1,
            embeddings: EmbeddingSource::WordVector,
            ..Self::default()
        })
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "preset" => *self = Self::preset(value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "mode" => {
                w.mode = parse(key, value)?;
                if w.mode == LossMode::Multi {
                    let m = LossWeights::multi();
                    w.tri_sym = w.tri_sym.or(m.tri_sym);
                    w.tri_corr = w.tri_corr.or(m.tri_corr);
                }
            }
            "lambda1" => w.sym = parse(key, value)?,
            "lambda2" => w.axiom = parse(key, value)?,
            "lambda3" => w.cls_a = parse(key, value)?,
            "lambda4" => w.cls_o = parse(key, value)?,
            "lambda5" => w.tri = parse(key, value)?,
            "lambda6" => w.tri_sym = Some(parse(key, value)?),
            "lambda7" => w.tri_corr = Some(parse(key, value)?),
            "margin" => w.alpha = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = value.parse()?,
            "embedding_file" => self.embedding_file = Some(PathBuf::from(value)),
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "attn_hidden" => self.attn_hidden = parse(key, value)?,
            "trunk_hidden" => self.trunk_hidden = parse(key, value)?,
            "cls_hidden" => self.cls_hidden = parse(key, value)?,
            "distance" => self.distance = value.parse()?,
            "attr_cls_input" => self.attr_cls_input = value.parse()?,
            "attention" => self.attention = value.parse()?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "log_interval" => self.log_interval = parse(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "resume" => self.resume = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::load(path, format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::load(path, format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.embeddings == EmbeddingSource::WordVector && self.embedding_file.is_none() {
            return Err(Error::Config("embeddings = word_vector needs embedding_file".into()));
        }
        self.weights.validate()
    }

    /// Round-trippable `key = value` text.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("mode", format!("{:?}", w.mode).to_lowercase());
        kv("lambda1", w.sym.to_string());
        kv("lambda2", w.axiom.to_string());
        kv("lambda3", w.cls_a.to_string());
        kv("lambda4", w.cls_o.to_string());
        kv("lambda5", w.tri.to_string());
        if let Some(v) = w.tri_sym {
            kv("lambda6", v.to_string());
        }
        if let Some(v) = w.tri_corr {
            kv("lambda7", v.to_string());
        }
        kv("margin", w.alpha.to_string());
        kv("gamma", self.gamma.to_string());
        kv("seed", self.seed.to_string());
        if let Some(p) = &self.dataset {
            kv("dataset", p.display().to_string());
        }
        kv("embeddings", self.embeddings.as_str().into());
        if let Some(p) = &self.embedding_file {
            kv("embedding_file", p.display().to_string());
        }
        kv("bn_momentum", self.bn_momentum.to_string());
        kv("attn_hidden", self.attn_hidden.to_string());
        kv("trunk_hidden", self.trunk_hidden.to_string());
        kv("cls_hidden", self.cls_hidden.to_string());
        kv("distance", self.distance.as_str().into());
        kv("attr_cls_input", self.attr_cls_input.as_str().into());
        kv("attention", self.attention.as_str().into());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("log_interval", self.log_interval.to_string());
        if let Some(p) = &self.out_dir {
            kv("out_dir", p.display().to_string());
        }
        kv("checkpoint_every", self.checkpoint_every.to_string());
        if let Some(p) = &self.resume {
            kv("resume", p.display().to_string());
        }
        s
    }
}
