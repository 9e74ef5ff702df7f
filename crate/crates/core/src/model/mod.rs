//! Coupling/decoupling transformation networks, classifiers and relative
//! moving distance scoring.

mod rmd;

use std::collections::BTreeMap;

use crate::data::{AttributeEmbedding, Dataset};
use crate::error::{Error, Result};
use crate::numgrad::{Activation, Affine, BatchNorm, Mode, ParamStore, Tape, Tensor, Var};

pub use rmd::{attr_prob, Distance, object_probs, pair_probs, rmd, rmd_vars, RmdScores, RmdVars};

/// Which of the two transformation networks to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Add the attribute (CoN).
    Couple,
    /// Remove the attribute (DecoN).
    Decouple,
}

/// Something that can couple or decouple attributes on a batch of features.
pub trait AttrTransform {
    fn n_attrs(&self) -> usize;

    /// Metric used for moving distances.
    fn distance(&self) -> Distance {
        Distance::L2
    }

    /// Transforms row `r` of `f` with attribute `attrs[r]`.
    fn transform(&mut self, tape: &mut Tape, store: &mut ParamStore, dir: Direction, f: Var, attrs: &[usize])
        -> Result<Var>;

    /// Attention vectors of every attribute, `[n, feature_dim]`, if the transform has any.
    fn attention_table(&mut self, _tape: &mut Tape, _store: &mut ParamStore, _dir: Direction) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// How the attribute classifier sees a transformed embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrClsInput {
    /// Classify the transformed embedding itself.
    Transformed,
    /// Classify `transformed − original`.
    Difference,
}

impl std::str::FromStr for AttrClsInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformed" => Ok(Self::Transformed),
            "difference" => Ok(Self::Difference),
            other => Err(Error::Config(format!("unknown attribute classifier input `{other}`"))),
        }
    }
}

impl AttrClsInput {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Transformed => "transformed",
            Self::Difference => "difference",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub n_attrs: usize,
    pub n_objects: usize,
    /// 0 means `feature_dim`.
    pub attn_hidden: usize,
    /// 0 means `2 · feature_dim`.
    pub trunk_hidden: usize,
    /// 0 means `feature_dim`.
    pub cls_hidden: usize,
    pub bn_momentum: f64,
    pub attention: Activation,
    pub attr_cls_input: AttrClsInput,
    pub distance: Distance,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, n_attrs: usize, n_objects: usize) -> Self {
        Self {
            feature_dim,
            n_attrs,
            n_objects,
            attn_hidden: 0,
            trunk_hidden: 0,
            cls_hidden: 0,
            bn_momentum: 0.9,
            attention: Activation::Sigmoid,
            attr_cls_input: AttrClsInput::Transformed,
            distance: Distance::L2,
        }
    }

    fn widths(&self) -> (usize, usize, usize) {
        let or = |w: usize, d: usize| if w == 0 { d } else { w };
        (
            or(self.attn_hidden, self.feature_dim),
            or(self.trunk_hidden, 2 * self.feature_dim),
            or(self.cls_hidden, self.feature_dim),
        )
    }
}

/// Attention subnet plus two-layer trunk. CoN and DecoN are two of these.
#[derive(Debug, Clone)]
pub struct TransformNet {
    attn_fc1: Affine,
    attn_bn: BatchNorm,
    attn_fc2: Affine,
    fc1: Affine,
    bn: BatchNorm,
    fc2: Affine,
}

impl TransformNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, emb_dim: usize) -> Result<Self> {
        let (attn_h, trunk_h, _) = cfg.widths();
        let d = cfg.feature_dim;
        Ok(Self {
            attn_fc1: Affine::new(store, &format!("{name}.attn.fc1"), emb_dim, attn_h)?,
            attn_bn: BatchNorm::new(store, &format!("{name}.attn.bn"), attn_h, cfg.bn_momentum)?,
            attn_fc2: Affine::new(store, &format!("{name}.attn.fc2"), attn_h, d)?,
            fc1: Affine::new(store, &format!("{name}.fc1"), d + emb_dim, trunk_h)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), trunk_h, cfg.bn_momentum)?,
            fc2: Affine::new(store, &format!("{name}.fc2"), trunk_h, d)?,
        })
    }

    pub fn attn_layers(&self) -> [&Affine; 2] {
        [&self.attn_fc1, &self.attn_fc2]
    }

    pub fn trunk_layers(&self) -> [&Affine; 2] {
        [&self.fc1, &self.fc2]
    }

    fn attention(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        emb: Var,
        mode: Mode,
        act: Activation,
    ) -> Result<Var> {
        let h = self.attn_fc1.forward(tape, store, emb)?;
        let h = self.attn_bn.forward(tape, store, h, mode)?;
        let h = tape.relu(h);
        let z = self.attn_fc2.forward(tape, store, h)?;
        Ok(act.apply(tape, z))
    }

    fn trunk(&self, tape: &mut Tape, store: &mut ParamStore, f: Var, att: Var, emb: Var, mode: Mode) -> Result<Var> {
        let gated = tape.mul(f, att)?;
        let gated = tape.add(gated, f)?;
        let x = tape.concat(gated, emb)?;
        let h = self.fc1.forward(tape, store, x)?;
        let h = self.bn.forward(tape, store, h, mode)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }
}

/// Two-layer classifier with a ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct Classifier {
    fc1: Affine,
    fc2: Affine,
}

impl Classifier {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            fc1: Affine::new(store, &format!("{name}.fc1"), input, hidden)?,
            fc2: Affine::new(store, &format!("{name}.fc2"), hidden, out)?,
        })
    }

    pub fn layers(&self) -> [&Affine; 2] {
        [&self.fc1, &self.fc2]
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }
}

#[derive(Debug, Clone, Copy)]
struct TapeCache {
    tape: u64,
    emb: Var,
    att_plus: Option<Var>,
    att_minus: Option<Var>,
}

/// Layer handles of the full network. Parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    emb_dim: usize,
    embeddings: crate::numgrad::BufferId,
    con: TransformNet,
    decon: TransformNet,
    attr_cls: Classifier,
    obj_cls: Classifier,
    mode: Mode,
    cache: Option<TapeCache>,
}

pub const EMBEDDING_BUFFER: &str = "attr_embeddings";

impl Model {
    /// Registers all parameters in `store`. The attribute embeddings are kept
    /// as a non-trainable buffer so checkpoints are self-contained.
    pub fn new(cfg: ModelConfig, embeddings: &AttributeEmbedding, store: &mut ParamStore) -> Result<Self> {
        if embeddings.n() != cfg.n_attrs {
            return Err(Error::Config(format!(
                "{} attribute embeddings for {} attributes",
                embeddings.n(),
                cfg.n_attrs
            )));
        }
        if cfg.n_attrs < 2 || cfg.n_objects < 1 || cfg.feature_dim < 1 {
            return Err(Error::Config("model needs at least 2 attributes, 1 object and a feature".into()));
        }
        let emb_dim = embeddings.dim();
        let table = Tensor::from_rows(&embeddings.vectors)?;
        let buffer = store.add_buffer(EMBEDDING_BUFFER, table)?;
        let (_, _, cls_h) = cfg.widths();
        let con = TransformNet::new(store, "con", &cfg, emb_dim)?;
        let decon = TransformNet::new(store, "decon", &cfg, emb_dim)?;
        let attr_cls = Classifier::new(store, "attr_cls", cfg.feature_dim, cls_h, cfg.n_attrs)?;
        let obj_cls = Classifier::new(store, "obj_cls", cfg.feature_dim, cls_h, cfg.n_objects)?;
        Ok(Self {
            cfg,
            emb_dim,
            embeddings: buffer,
            con,
            decon,
            attr_cls,
            obj_cls,
            mode: Mode::Train,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.cache = None;
    }

    pub fn net(&self, dir: Direction) -> &TransformNet {
        match dir {
            Direction::Couple => &self.con,
            Direction::Decouple => &self.decon,
        }
    }

    pub fn attr_classifier(&self) -> &Classifier {
        &self.attr_cls
    }

    pub fn obj_classifier(&self) -> &Classifier {
        &self.obj_cls
    }

    fn cache(&mut self, tape: &mut Tape, store: &ParamStore) -> TapeCache {
        match self.cache {
            Some(c) if c.tape == tape.id() => c,
            _ => {
                let emb = tape.input(store.buffer(self.embeddings).clone());
                let c = TapeCache {
                    tape: tape.id(),
                    emb,
                    att_plus: None,
                    att_minus: None,
                };
                self.cache = Some(c);
                c
            }
        }
    }

    /// Attention vectors for all attributes, computed once per tape.
    pub fn attention(&mut self, tape: &mut Tape, store: &mut ParamStore, dir: Direction) -> Result<Var> {
        let mut c = self.cache(tape, store);
        let slot = match dir {
            Direction::Couple => c.att_plus,
            Direction::Decouple => c.att_minus,
        };
        if let Some(v) = slot {
            return Ok(v);
        }
        let att = self.net(dir).attention(tape, store, c.emb, self.mode, self.cfg.attention)?;
        match dir {
            Direction::Couple => c.att_plus = Some(att),
            Direction::Decouple => c.att_minus = Some(att),
        }
        self.cache = Some(c);
        Ok(att)
    }

    pub fn attr_logits(&self, tape: &mut Tape, store: &ParamStore, original: Var, transformed: Var) -> Result<Var> {
        let x = match self.cfg.attr_cls_input {
            AttrClsInput::Transformed => transformed,
            AttrClsInput::Difference => tape.sub(transformed, original)?,
        };
        self.attr_cls.logits(tape, store, x)
    }

    pub fn obj_logits(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        self.obj_cls.logits(tape, store, f)
    }

    /// Dimensions and vocabulary digests stored alongside a checkpoint.
    pub fn meta(&self, dataset: Option<&Dataset>) -> BTreeMap<String, String> {
        let c = &self.cfg;
        let (attn_h, trunk_h, cls_h) = c.widths();
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("feature_dim", c.feature_dim),
            ("n_attrs", c.n_attrs),
            ("n_objects", c.n_objects),
            ("emb_dim", self.emb_dim),
            ("attn_hidden", attn_h),
            ("trunk_hidden", trunk_h),
            ("cls_hidden", cls_h),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        m.insert("bn_momentum".into(), c.bn_momentum.to_string());
        m.insert("attention".into(), c.attention.as_str().into());
        m.insert("attr_cls_input".into(), c.attr_cls_input.as_str().into());
        m.insert("distance".into(), c.distance.as_str().into());
        if let Some(ds) = dataset {
            m.insert("attr_vocab_hash".into(), Dataset::vocab_hash(&ds.attr_vocab));
            m.insert("object_vocab_hash".into(), Dataset::vocab_hash(&ds.object_vocab));
        }
        m
    }

    /// Rebuilds the model described by checkpoint metadata, with placeholder
    /// embeddings the checkpoint will overwrite.
    pub fn from_meta(meta: &BTreeMap<String, String>, store: &mut ParamStore) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint metadata `{k}` is not an integer")))
        };
        let cfg = ModelConfig {
            feature_dim: num("feature_dim")?,
            n_attrs: num("n_attrs")?,
            n_objects: num("n_objects")?,
            attn_hidden: num("attn_hidden")?,
            trunk_hidden: num("trunk_hidden")?,
            cls_hidden: num("cls_hidden")?,
            bn_momentum: get("bn_momentum")?
                .parse()
                .map_err(|_| Error::Config("checkpoint metadata `bn_momentum` is not a number".into()))?,
            attention: get("attention")?.parse()?,
            attr_cls_input: get("attr_cls_input")?.parse()?,
            distance: get("distance")?.parse()?,
        };
        let emb = AttributeEmbedding {
            vectors: vec![vec![0.0; num("emb_dim")?]; cfg.n_attrs],
            source: crate::data::EmbeddingSource::OneHot,
        };
        Self::new(cfg, &emb, store)
    }

    /// Rejects a dataset whose vocabularies or dimensions differ from the ones
    /// the checkpoint was trained on.
    pub fn check_dataset(meta: &BTreeMap<String, String>, dataset: &Dataset, path: &std::path::Path) -> Result<()> {
        for (key, vocab) in [("attr_vocab_hash", &dataset.attr_vocab), ("object_vocab_hash", &dataset.object_vocab)] {
            let want = Dataset::vocab_hash(vocab);
            match meta.get(key) {
                Some(have) if *have == want => {}
                Some(have) => {
                    return Err(Error::load(
                        path,
                        format!("{key} {have} does not match the dataset ({want}); the checkpoint was trained on a different vocabulary"),
                    ))
                }
                None => return Err(Error::load(path, format!("checkpoint has no {key}"))),
            }
        }
        if meta.get("feature_dim").map(String::as_str) != Some(&dataset.feature_dim.to_string()) {
            return Err(Error::load(path, format!("feature_dim differs from dataset ({})", dataset.feature_dim)));
        }
        Ok(())
    }
}

impl AttrTransform for Model {
    fn n_attrs(&self) -> usize {
        self.cfg.n_attrs
    }

    fn distance(&self) -> Distance {
        self.cfg.distance
    }

    fn transform(&mut self, tape: &mut Tape, store: &mut ParamStore, dir: Direction, f: Var, attrs: &[usize])
        -> Result<Var> {
        let fv = tape.value(f);
        if fv.cols() != self.cfg.feature_dim || fv.rows() != attrs.len() {
            return Err(Error::shape("transform", fv.shape(), &[attrs.len(), self.cfg.feature_dim]));
        }
        let table = self.attention(tape, store, dir)?;
        let emb = self.cache(tape, store).emb;
        let att = tape.gather(table, attrs)?;
        let a = tape.gather(emb, attrs)?;
        self.net(dir).trunk(tape, store, f, att, a, self.mode)
    }

    fn attention_table(&mut self, tape: &mut Tape, store: &mut ParamStore, dir: Direction) -> Result<Option<Var>> {
        self.attention(tape, store, dir).map(Some)
    }
}

/// `T_e`: returns the features unchanged in both directions.
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    pub n_attrs: usize,
}

impl AttrTransform for Identity {
    fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    fn transform(&mut self, tape: &mut Tape, _: &mut ParamStore, _: Direction, f: Var, attrs: &[usize]) -> Result<Var> {
        if tape.value(f).rows() != attrs.len() {
            return Err(Error::shape("transform", tape.value(f).shape(), &[attrs.len()]));
        }
        Ok(f)
    }
}

/// Adds a fixed per-attribute vector: `plus[a]` when coupling, `minus[a]` when decoupling.
#[derive(Debug, Clone)]
pub struct Translation {
    pub plus: Vec<Vec<f64>>,
    pub minus: Vec<Vec<f64>>,
}

impl AttrTransform for Translation {
    fn n_attrs(&self) -> usize {
        self.plus.len()
    }

    fn transform(&mut self, tape: &mut Tape, _: &mut ParamStore, dir: Direction, f: Var, attrs: &[usize]) -> Result<Var> {
        let table = match dir {
            Direction::Couple => &self.plus,
            Direction::Decouple => &self.minus,
        };
        let rows: Vec<Vec<f64>> = attrs.iter().map(|&a| table[a].clone()).collect();
        let shift = tape.input(Tensor::from_rows(&rows)?);
        tape.add(f, shift)
    }
}
