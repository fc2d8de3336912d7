//! Sidecar embedding store and vector distances.
//!
//! The sidecar file is JSON-lines, one `{"id": str, "vec": [float, ...]}` per
//! image; the dimension comes from the first line. An optional sibling
//! `<stem>.meta.json` describes the extractor (backbone, layer, preprocessing,
//! dimension).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingError {
    #[error("io error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in embedding for {0}")]
    NonFinite(String),
    #[error("ids not present in corpus: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("no embedding for {0}")]
    Missing(String),
    #[error("store is empty; dimension undefined")]
    EmptyStore,
    #[error("cosine similarity undefined for zero-norm vector")]
    ZeroNorm,
    #[error("meta file declares dimension {meta} but vectors have {data}")]
    MetaDimension { meta: usize, data: usize },
}

/// Extractor metadata from the sibling `.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorMeta {
    pub backbone: String,
    pub layer: String,
    #[serde(default)]
    pub preprocessing: serde_json::Value,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    #[serde(rename = "id")]
    pub image_id: String,
    pub vec: Vec<f64>,
}

/// Memory-resident embeddings keyed by image id. Immutable after load.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    entries: HashMap<String, Vec<f64>>,
    by_category: BTreeMap<String, Vec<String>>,
    meta: Option<ExtractorMeta>,
}

impl EmbeddingStore {
    /// Build a store from vectors, cross-checking ids against `corpus`.
    pub fn from_vectors(
        vectors: impl IntoIterator<Item = EmbeddingVector>,
        corpus: &Corpus,
    ) -> Result<Self, EmbeddingError> {
        let mut store = Self::default();
        let mut unknown = Vec::new();
        for v in vectors {
            store.check_vector(&v)?;
            match corpus.get(&v.image_id) {
                Some(rec) => store
                    .by_category
                    .entry(rec.category.clone())
                    .or_default()
                    .push(v.image_id.clone()),
                None => {
                    unknown.push(v.image_id);
                    continue;
                }
            }
            if store.entries.insert(v.image_id.clone(), v.vec).is_some() {
                return Err(EmbeddingError::DuplicateId(v.image_id));
            }
        }
        if !unknown.is_empty() {
            return Err(EmbeddingError::UnknownIds(unknown));
        }
        for ids in store.by_category.values_mut() {
            ids.sort();
        }
        Ok(store)
    }

    fn check_vector(&mut self, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
        match self.dim {
            Some(d) if d != v.vec.len() => {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: d,
                    got: v.vec.len(),
                })
            }
            Some(_) => {}
            None => self.dim = Some(v.vec.len()),
        }
        if v.vec.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(v.image_id.clone()));
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meta(&self) -> Option<&ExtractorMeta> {
        self.meta.as_ref()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<&[f64], EmbeddingError> {
        if self.dim.is_none() {
            return Err(EmbeddingError::EmptyStore);
        }
        self.entries
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbeddingError::Missing(id.to_string()))
    }

    /// Ids of one category, ascending.
    pub fn category_ids(&self, category: &str) -> &[String] {
        self.by_category.get(category).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Load a sidecar embedding file and cross-check it against `corpus`.
pub fn load_store(path: &Path, corpus: &Corpus) -> Result<EmbeddingStore, EmbeddingError> {
    let io = |e: std::io::Error| EmbeddingError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut vectors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let v: EmbeddingVector = serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        vectors.push(v);
    }
    let mut store = EmbeddingStore::from_vectors(vectors, corpus)?;

    let meta_file = meta_path(path);
    if meta_file.is_file() {
        let text = fs::read_to_string(&meta_file).map_err(|e| EmbeddingError::Io {
            path: meta_file.clone(),
            message: e.to_string(),
        })?;
        let meta: ExtractorMeta = serde_json::from_str(&text).map_err(|e| EmbeddingError::Parse {
            path: meta_file.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        if let Some(d) = store.dim.filter(|&d| d != meta.dimension) {
            return Err(EmbeddingError::MetaDimension {
                meta: meta.dimension,
                data: d,
            });
        }
        store.meta = Some(meta);
    }
    Ok(store)
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// L2 distance, accumulated in index order.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    check_dims(a, b)?;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

pub fn norm(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        acc += x * x;
    }
    acc.sqrt()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let mut dot = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
