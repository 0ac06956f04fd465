//! Ranking of integration-module docs by cosine similarity to a query.
//!
//! The default embedder is hashed TF-IDF: lowercase alphanumeric tokens are
//! hashed (FNV-1a) into 4096 buckets, weighted by smoothed inverse document
//! frequency over the registered docs and L2-normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DIM: usize = 4096;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("module `{0}` is already loaded")]
    Duplicate(String),
    #[error("module names must be non-empty")]
    EmptyName,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: String, source: serde_json::Error },
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn bucket(token: &str) -> usize {
    (fnv1a(token) % DIM as u64) as usize
}

/// Turns text into vectors; `fit` is called with every doc after a change.
pub trait Embedder: Send + Sync {
    fn fit(&mut self, corpus: &[&str]);
    fn embed(&self, text: &str) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedTfIdf {
    idf: Vec<f64>,
}

impl Default for HashedTfIdf {
    fn default() -> Self {
        HashedTfIdf { idf: vec![1.0; DIM] }
    }
}

impl HashedTfIdf {
    pub fn idf(&self) -> &[f64] {
        &self.idf
    }
}

impl Embedder for HashedTfIdf {
    fn fit(&mut self, corpus: &[&str]) {
        let mut df = vec![0usize; DIM];
        for doc in corpus {
            let mut seen = vec![false; DIM];
            for t in tokenize(doc) {
                seen[bucket(&t)] = true;
            }
            for (d, s) in df.iter_mut().zip(seen) {
                *d += usize::from(s);
            }
        }
        let n = corpus.len() as f64;
        self.idf = df.into_iter().map(|d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; DIM];
        for t in tokenize(text) {
            v[bucket(&t)] += 1.0;
        }
        for (x, w) in v.iter_mut().zip(&self.idf) {
            *x *= w;
        }
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDoc {
    pub name: String,
    pub doc: String,
    #[serde(skip)]
    pub vector: Vec<f64>,
}

impl ModuleDoc {
    pub fn new(name: &str, doc: &str) -> Self {
        ModuleDoc { name: name.into(), doc: doc.into(), vector: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub name: String,
    pub score: f64,
}

const SHIPPED: [&str; 5] = [
    include_str!("../assets/modules/cebra.json"),
    include_str!("../assets/modules/ethogram.json"),
    include_str!("../assets/modules/file-io.json"),
    include_str!("../assets/modules/kinematics.json"),
    include_str!("../assets/modules/umap.json"),
];

/// The module docs bundled with the crate.
pub fn shipped_docs() -> Vec<ModuleDoc> {
    SHIPPED.iter().map(|s| serde_json::from_str(s).expect("bundled module doc is valid")).collect()
}

pub struct ModuleRegistry<E: Embedder = HashedTfIdf> {
    docs: Vec<ModuleDoc>,
    embedder: E,
}

impl Default for ModuleRegistry<HashedTfIdf> {
    fn default() -> Self {
        ModuleRegistry::new(HashedTfIdf::default())
    }
}

impl ModuleRegistry<HashedTfIdf> {
    pub fn with_shipped() -> Self {
        let mut r = ModuleRegistry::default();
        r.extend(shipped_docs()).expect("bundled names are distinct");
        r
    }
}

impl<E: Embedder> ModuleRegistry<E> {
    pub fn new(embedder: E) -> Self {
        ModuleRegistry { docs: Vec::new(), embedder }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[ModuleDoc] {
        &self.docs
    }

    pub fn names(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ModuleDoc> {
        self.docs.iter().find(|d| d.name == name)
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    /// Adds docs and re-indexes every entry. All or nothing.
    pub fn extend(&mut self, docs: impl IntoIterator<Item = ModuleDoc>) -> Result<(), RetrievalError> {
        let mut next = self.docs.clone();
        for d in docs {
            if d.name.is_empty() {
                return Err(RetrievalError::EmptyName);
            }
            if next.iter().any(|x| x.name == d.name) {
                return Err(RetrievalError::Duplicate(d.name));
            }
            next.push(d);
        }
        next.sort_by(|a, b| a.name.cmp(&b.name));
        self.docs = next;
        self.reindex();
        Ok(())
    }

    pub fn add(&mut self, doc: ModuleDoc) -> Result<(), RetrievalError> {
        self.extend([doc])
    }

    /// Reads a `{"name", "doc"}` file and adds it.
    pub fn manual_load(&mut self, path: &Path) -> Result<(), RetrievalError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::Io { path: p.clone(), source })?;
        let doc: ModuleDoc = serde_json::from_str(&text).map_err(|source| RetrievalError::Format { path: p, source })?;
        self.add(doc)
    }

    fn reindex(&mut self) {
        let corpus: Vec<&str> = self.docs.iter().map(|d| d.doc.as_str()).collect();
        self.embedder.fit(&corpus);
        let vectors: Vec<Vec<f64>> = self.docs.iter().map(|d| self.embedder.embed(&d.doc)).collect();
        for (d, v) in self.docs.iter_mut().zip(vectors) {
            d.vector = v;
        }
    }

    /// Top `k` docs by cosine similarity, best first; ties go to the smaller name.
    pub fn query(&self, text: &str, k: usize) -> Vec<Ranked> {
        let q = self.embedder.embed(text);
        let mut all: Vec<Ranked> =
            self.docs.iter().map(|d| Ranked { name: d.name.clone(), score: cosine(&q, &d.vector) }).collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
        all.truncate(k);
        all
    }
}
