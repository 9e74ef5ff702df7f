//! Dataset manifest (JSON) with a raw little-endian feature matrix, or a
//! whitespace-separated text matrix for hand-written fixtures.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, InstanceRecord, PairLists};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDtype {
    F32,
    F64,
}

impl FeatureDtype {
    fn bytes(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub feature_file: String,
    pub dtype: FeatureDtype,
    pub feature_dim: usize,
    pub n_records: usize,
    pub attr_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
    /// Lines of `record_id<TAB>object_id<TAB>attr_id,attr_id,...`, one per feature row.
    pub labels_file: String,
    /// Split name to record ids.
    pub splits: BTreeMap<String, Vec<String>>,
    /// Lines of `seen|unseen<TAB>attr_id<TAB>object_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_file: Option<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_index(field: &str, bound: usize, what: &str, path: &Path, line: usize) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| Error::load(path, format!("line {line}: bad {what} index `{field}`")))?;
    if v >= bound {
        return Err(Error::load(path, format!("line {line}: {what} index out of range ({v} >= {bound})")));
    }
    Ok(v)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = read_text(manifest_path)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::load(manifest_path, format!("manifest: {e}")))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let (n, m, dim) = (manifest.attr_vocab.len(), manifest.object_vocab.len(), manifest.feature_dim);

    let labels_path = dir.join(&manifest.labels_file);
    let labels = read_text(&labels_path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labelled = Vec::new();
    for (line, row) in content_lines(&labels) {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::load(&labels_path, format!("line {line}: expected 2 or 3 tab-separated fields")));
        }
        let id = fields[0].trim().to_string();
        if ids.insert(id.clone(), labelled.len()).is_some() {
            return Err(Error::load(&labels_path, format!("line {line}: duplicate record id `{id}`")));
        }
        let object = parse_index(fields[1], m, "object", &labels_path, line)?;
        let mut attrs = fields
            .get(2)
            .map(|f| f.split(',').filter(|s| !s.trim().is_empty()).collect::<Vec<_>>())
            .unwrap_or_default()
            .into_iter()
            .map(|s| parse_index(s, n, "attribute", &labels_path, line))
            .collect::<Result<Vec<_>>>()?;
        attrs.sort_unstable();
        attrs.dedup();
        labelled.push((id, object, attrs));
    }
    if labelled.len() != manifest.n_records {
        return Err(Error::load(
            &labels_path,
            format!("{} records but manifest declares n_records = {}", labelled.len(), manifest.n_records),
        ));
    }

    let feature_path = dir.join(&manifest.feature_file);
    let features = read_features(&feature_path, manifest.dtype, manifest.n_records, dim)?;

    let records: Vec<InstanceRecord> = labelled
        .into_iter()
        .zip(features)
        .map(|((id, object, attrs), feature)| InstanceRecord {
            id,
            feature,
            object,
            attrs,
        })
        .collect();

    let mut splits = BTreeMap::new();
    for (name, members) in &manifest.splits {
        let idx = members
            .iter()
            .map(|id| {
                ids.get(id)
                    .copied()
                    .ok_or_else(|| Error::load(manifest_path, format!("split `{name}` names unknown record `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        splits.insert(name.clone(), idx);
    }
    for required in ["train", "test"] {
        if !splits.contains_key(required) {
            return Err(Error::load(manifest_path, format!("missing `{required}` split")));
        }
    }
    if let Some(r) = splits["train"].iter().map(|&i| &records[i]).find(|r| r.attrs.is_empty()) {
        return Err(Error::load(&labels_path, format!("training record `{}` has no attributes", r.id)));
    }

    let pairs = match &manifest.pairs_file {
        Some(f) => Some(read_pairs(&dir.join(f), n, m)?),
        None => None,
    };

    Ok(Dataset {
        records,
        attr_vocab: manifest.attr_vocab,
        object_vocab: manifest.object_vocab,
        feature_dim: dim,
        splits,
        pairs,
    })
}

fn read_features(path: &Path, dtype: FeatureDtype, rows: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let is_text = matches!(path.extension().and_then(|e| e.to_str()), Some("tsv" | "txt"));
    let out = if is_text {
        let text = read_text(path)?;
        let mut out = Vec::with_capacity(rows);
        for (line, row) in content_lines(&text) {
            let v = row
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::load(path, format!("line {line}: {e}")))?;
            if v.len() != dim {
                return Err(Error::load(path, format!("line {line}: {} values, feature_dim is {dim}", v.len())));
            }
            out.push(v);
        }
        if out.len() != rows {
            return Err(Error::load(path, format!("{} feature rows, expected {rows}", out.len())));
        }
        out
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let width = dtype.bytes();
        let expected = rows * dim * width;
        if bytes.len() != expected {
            return Err(Error::load(
                path,
                format!("{} bytes, expected {expected} ({rows} rows × {dim} × {width})", bytes.len()),
            ));
        }
        let values: Vec<f64> = match dtype {
            FeatureDtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            FeatureDtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        values.chunks(dim.max(1)).take(rows).map(<[f64]>::to_vec).collect()
    };
    for (r, row) in out.iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            let offset = (r * dim + c) * dtype.bytes();
            return Err(Error::load(path, format!("non-finite value at row {r}, column {c} (offset {offset})")));
        }
    }
    Ok(out)
}

fn read_pairs(path: &Path, n: usize, m: usize) -> Result<PairLists> {
    let text = read_text(path)?;
    let mut lists = PairLists::default();
    for (line, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::load(path, format!("line {line}: expected `seen|unseen<TAB>attr<TAB>object`")));
        }
        let pair = (
            parse_index(fields[1], n, "attribute", path, line)?,
            parse_index(fields[2], m, "object", path, line)?,
        );
        match fields[0].trim() {
            "seen" => lists.seen.push(pair),
            "unseen" => lists.unseen.push(pair),
            other => return Err(Error::load(path, format!("line {line}: unknown pair kind `{other}`"))),
        }
    }
    Ok(lists)
}

/// Writes `manifest.json`, `features.bin`, `labels.tsv` and (when present)
/// `pairs.tsv` into `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, ds: &Dataset, dtype: FeatureDtype) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut features = Vec::with_capacity(ds.records.len() * ds.feature_dim * dtype.bytes());
    let mut labels = String::new();
    for r in &ds.records {
        for &v in &r.feature {
            match dtype {
                FeatureDtype::F64 => features.extend_from_slice(&v.to_le_bytes()),
                FeatureDtype::F32 => features.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        let attrs: Vec<String> = r.attrs.iter().map(ToString::to_string).collect();
        labels.push_str(&format!("{}\t{}\t{}\n", r.id, r.object, attrs.join(",")));
    }
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("features.bin", &features)?;
    write("labels.tsv", labels.as_bytes())?;
    let pairs_file = match &ds.pairs {
        Some(p) => {
            let mut text = String::new();
            for (kind, list) in [("seen", &p.seen), ("unseen", &p.unseen)] {
                for (a, o) in list {
                    text.push_str(&format!("{kind}\t{a}\t{o}\n"));
                }
            }
            write("pairs.tsv", text.as_bytes())?;
            Some("pairs.tsv".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        feature_file: "features.bin".into(),
        dtype,
        feature_dim: ds.feature_dim,
        n_records: ds.records.len(),
        attr_vocab: ds.attr_vocab.clone(),
        object_vocab: ds.object_vocab.clone(),
        labels_file: "labels.tsv".into(),
        splits: ds
            .splits
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|&i| ds.records[i].id.clone()).collect()))
            .collect(),
        pairs_file,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join("manifest.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, labels: &str, features: &str) -> PathBuf {
        fs::write(dir.join("labels.tsv"), labels).unwrap();
        fs::write(dir.join("features.tsv"), features).unwrap();
        let manifest = r#"{
            "feature_file": "features.tsv", "dtype": "f64", "feature_dim": 4, "n_records": 2,
            "attr_vocab": ["red", "dry"], "object_vocab": ["apple"],
            "labels_file": "labels.tsv", "splits": {"train": ["a"], "test": ["b"]}
        }"#;
        let p = dir.join("manifest.json");
        fs::write(&p, manifest).unwrap();
        p
    }

    #[test]
    fn loads_text_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture(dir.path(), "a\t0\t0\nb\t0\t1\n", "1 2 3 4\n5 6 7 8\n");
        let ds = load_dataset(&p).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.feature_dim, 4);
        assert_eq!(ds.records[1].feature, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(ds.split("test").unwrap()[0].id, "b");
    }

    #[test]
    fn attribute_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture(dir.path(), "a\t0\t0\nb\t0\t2\n", "1 2 3 4\n5 6 7 8\n");
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("attribute index out of range") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn duplicate_record_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture(dir.path(), "a\t0\t0\na\t0\t1\n", "1 2 3 4\n5 6 7 8\n");
        assert!(load_dataset(&p).unwrap_err().to_string().contains("duplicate record id"));
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture(dir.path(), "a\t0\t0\nb\t0\t1\n", "1 2 3 4\n5 6 7\n");
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("features.tsv") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_feature_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture(dir.path(), "a\t0\t0\nb\t0\t1\n", "");
        fs::remove_file(dir.path().join("features.tsv")).unwrap();
        let err = load_dataset(&p).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("features.tsv"));
    }
}
