//! Checkpoint file: a UTF-8 manifest followed by raw little-endian values.
//!
//! ```text
//! attrsym-checkpoint 1
//! dtype f64
//! seed 7
//! meta <key> <value>
//! param <name> <d0,d1,...>
//! buffer <name> <d0,...>
//! end
//! <values of every param/buffer in manifest order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamStore, Real, Tensor};

const MAGIC: &str = "attrsym-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry<T> {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<CheckpointEntry<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_store(store: &ParamStore<T>, meta: BTreeMap<String, String>) -> Self {
        let mut entries: Vec<_> = store
            .ids()
            .map(|id| CheckpointEntry {
                name: store.name(id).to_string(),
                trainable: true,
                value: store.value(id).clone(),
            })
            .collect();
        entries.extend(store.buffer_ids().map(|id| CheckpointEntry {
            name: store.buffer_name(id).to_string(),
            trainable: false,
            value: store.buffer(id).clone(),
        }));
        Self {
            seed: store.seed(),
            meta,
            entries,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = format!("{MAGIC}\ndtype {}\nseed {}\n", T::DTYPE, self.seed);
        for (k, v) in &self.meta {
            check_token(k)?;
            if v.contains('\n') {
                return Err(Error::Contract(format!("meta value for `{k}` contains a newline")));
            }
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for e in &self.entries {
            check_token(&e.name)?;
            let dims: Vec<String> = e.value.shape().iter().map(ToString::to_string).collect();
            let kind = if e.trainable { "param" } else { "buffer" };
            head.push_str(&format!("{kind} {} {}\n", e.name, dims.join(",")));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for e in &self.entries {
            for &v in e.value.data() {
                v.put_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::load(path, detail);
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("manifest is not terminated by `end`".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl])
                .map_err(|_| bad(format!("manifest line {} is not UTF-8", lines.len() + 1)))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut seed = 0;
        let mut meta = BTreeMap::new();
        let mut layout = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            let lineno = i + 1;
            let (key, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            match key {
                "dtype" if rest != T::DTYPE => {
                    return Err(bad(format!("line {lineno}: dtype {rest} but {} requested", T::DTYPE)))
                }
                "dtype" => {}
                "seed" => seed = rest.parse().map_err(|_| bad(format!("line {lineno}: bad seed")))?,
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "param" | "buffer" => {
                    let (name, dims) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("line {lineno}: missing shape")))?;
                    let shape = dims
                        .split(',')
                        .map(str::parse::<usize>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("line {lineno}: bad shape `{dims}`")))?;
                    layout.push((name.to_string(), key == "param", shape));
                }
                other => return Err(bad(format!("line {lineno}: unknown key `{other}`"))),
            }
        }
        let mut entries = Vec::with_capacity(layout.len());
        for (name, trainable, shape) in layout {
            let numel: usize = shape.iter().product();
            let end = pos + numel * T::BYTES;
            if end > bytes.len() {
                return Err(bad(format!("truncated values for `{name}` at byte offset {pos}")));
            }
            let data = bytes[pos..end].chunks_exact(T::BYTES).map(T::get_le).collect();
            pos = end;
            entries.push(CheckpointEntry {
                name,
                trainable,
                value: Tensor::new(shape, data)?,
            });
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes after values", bytes.len() - pos)));
        }
        Ok(Self { seed, meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Overwrites every parameter and buffer of `store` with the stored values.
    ///
    /// Every trainable parameter in `store` must be present with the same
    /// shape; unknown buffers (optimizer state) are added.
    pub fn restore_into(&self, store: &mut ParamStore<T>, path: &Path) -> Result<()> {
        let mut seen = 0;
        for e in &self.entries {
            if e.trainable {
                let id = store
                    .id(&e.name)
                    .ok_or_else(|| Error::load(path, format!("unexpected parameter `{}`", e.name)))?;
                if store.value(id).shape() != e.value.shape() {
                    return Err(Error::load(
                        path,
                        format!(
                            "parameter `{}` has shape {:?}, model expects {:?}",
                            e.name,
                            e.value.shape(),
                            store.value(id).shape()
                        ),
                    ));
                }
                *store.value_mut(id) = e.value.clone();
                seen += 1;
            } else {
                match store.buffer_id(&e.name) {
                    Some(id) if store.buffer(id).shape() == e.value.shape() => {
                        *store.buffer_mut(id) = e.value.clone()
                    }
                    Some(_) => return Err(Error::load(path, format!("buffer `{}` shape mismatch", e.name))),
                    None => {
                        store.add_buffer(&e.name, e.value.clone())?;
                    }
                }
            }
        }
        if seen != store.len() {
            return Err(Error::load(
                path,
                format!("checkpoint holds {seen} of {} model parameters", store.len()),
            ));
        }
        store.zero_grad();
        Ok(())
    }
}

fn check_token(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Contract(format!("checkpoint name `{s}` must be non-empty without whitespace")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_with(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new(11);
        s.add("a.weight", Tensor::new(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s.add_uniform("b.weight", &[3, 2], 3).unwrap();
        s.add_buffer("b.running_var", Tensor::full(&[2], 1.5)).unwrap();
        s
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 1..20)) {
            let store = store_with(&values);
            let mut meta = BTreeMap::new();
            meta.insert("feature_dim".to_string(), "32".to_string());
            let ck = Checkpoint::from_store(&store, meta);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::<f64>::from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            let mut fresh = store_with(&vec![0.0; values.len()]);
            back.restore_into(&mut fresh, Path::new("mem")).unwrap();
            let orig: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            let got: Vec<u64> = fresh.value(fresh.id("a.weight").unwrap()).data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(orig, got);
        }
    }

    #[test]
    fn f32_round_trip() {
        let mut s = ParamStore::<f32>::new(1);
        s.add("w", Tensor::new(vec![2], vec![0.1f32, -3.5]).unwrap()).unwrap();
        let bytes = Checkpoint::from_store(&s, BTreeMap::new()).to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.entries[0].value.data(), &[0.1f32, -3.5]);
        assert!(Checkpoint::<f64>::from_bytes(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = Checkpoint::from_store(&store_with(&[1.0, 2.0]), BTreeMap::new())
            .to_bytes()
            .unwrap();
        let err = Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3], Path::new("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("x.ckpt"));
    }

    #[test]
    fn shape_mismatch_on_restore() {
        let ck = Checkpoint::from_store(&store_with(&[1.0, 2.0]), BTreeMap::new());
        let mut other = store_with(&[1.0, 2.0, 3.0]);
        assert!(matches!(ck.restore_into(&mut other, Path::new("m")), Err(Error::Load { .. })));
    }
}
