use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    WordVector,
    OneHot,
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_vector" | "word" => Ok(Self::WordVector),
            "one_hot" | "onehot" => Ok(Self::OneHot),
            other => Err(Error::Config(format!("unknown embedding mode `{other}`"))),
        }
    }
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WordVector => "word_vector",
            Self::OneHot => "one_hot",
        }
    }
}

/// One vector per attribute, rows in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEmbedding {
    pub vectors: Vec<Vec<f64>>,
    pub source: EmbeddingSource,
}

impl AttributeEmbedding {
    pub fn one_hot(n: usize) -> Self {
        let vectors = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            vectors,
            source: EmbeddingSource::OneHot,
        }
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// Parses `token v1 v2 ...` lines. All vectors must share one dimension.
pub fn parse_word_vectors(text: &str, path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(f64::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::load(path, format!("line {}: {e}", i + 1)))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::load(
                    path,
                    format!("line {}: `{token}` has {} values, expected {d}", i + 1, values.len()),
                ))
            }
            _ => {}
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

/// Attribute embedding matrix for `vocab`.
///
/// In word-vector mode every token needs a vector in the file; a multiword
/// token missing as a whole ("sliced apple", "sliced_apple") is the mean of
/// its words' vectors.
pub fn load_attr_embeddings(path: Option<&Path>, vocab: &[String], mode: EmbeddingSource) -> Result<AttributeEmbedding> {
    if mode == EmbeddingSource::OneHot {
        return Ok(AttributeEmbedding::one_hot(vocab.len()));
    }
    let path = path.ok_or_else(|| Error::Config("word-vector mode needs a vector file".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = parse_word_vectors(&text, path)?;
    let mut missing = Vec::new();
    let mut vectors = Vec::with_capacity(vocab.len());
    for token in vocab {
        if let Some(v) = table.get(token) {
            vectors.push(v.clone());
            continue;
        }
        let words: Vec<&str> = token.split([' ', '_']).filter(|w| !w.is_empty()).collect();
        let found: Vec<&Vec<f64>> = words.iter().filter_map(|w| table.get(*w)).collect();
        if words.len() > 1 && found.len() == words.len() {
            let mut mean = vec![0.0; found[0].len()];
            for v in &found {
                for (m, x) in mean.iter_mut().zip(v.iter()) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= found.len() as f64);
            vectors.push(mean);
        } else {
            missing.push(token.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::load(path, format!("no vector for tokens: {}", missing.join(", "))));
    }
    Ok(AttributeEmbedding {
        vectors,
        source: EmbeddingSource::WordVector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_hot_is_identity() {
        let e = load_attr_embeddings(None, &vocab(&["a", "b", "c"]), EmbeddingSource::OneHot).unwrap();
        assert_eq!(e.vectors, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn rows_follow_vocab_order() {
        let f = file("red 1 0\ndry 0 1\n");
        let e = load_attr_embeddings(Some(f.path()), &vocab(&["dry", "red"]), EmbeddingSource::WordVector).unwrap();
        assert_eq!(e.vectors, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn multiword_tokens_average() {
        let f = file("sliced 1 2 3\napple 3 0 -1\n");
        let e = load_attr_embeddings(Some(f.path()), &vocab(&["sliced apple"]), EmbeddingSource::WordVector).unwrap();
        assert_eq!(e.vectors, vec![vec![2.0, 1.0, 1.0]]);
    }

    #[test]
    fn missing_tokens_are_all_listed() {
        let f = file("red 1 0\n");
        let err = load_attr_embeddings(Some(f.path()), &vocab(&["wet", "red", "old"]), EmbeddingSource::WordVector)
            .unwrap_err()
            .to_string();
        assert!(err.contains("wet") && err.contains("old"), "{err}");
    }
}
