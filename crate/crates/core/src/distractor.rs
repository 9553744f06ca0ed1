//! Hard-negative distractor mining by exact cosine similarity.
//!
//! Index file layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "VIDX"
//! version    u32      1
//! dimension  u32
//! count      u64
//! count × record:
//!   id_len   u32
//!   id       id_len bytes of UTF-8
//!   vector   dimension × f32
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::ArticleStore;
use crate::llmgate::{EmbeddingVector, Gateway};

pub const MAX_PER_SOURCE: usize = 3;
pub const DEFAULT_POOL_SIZE: usize = 10;
const MAGIC: &[u8; 4] = b"VIDX";
const VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DistractError {
    #[error("embedding failed for {} article(s): {}", .missing.len(), .missing.join(", "))]
    MissingEmbeddings { missing: Vec<String>, reason: String },
    #[error("store is empty")]
    EmptyStore,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("source `{0}` is not in the index")]
    UnknownSource(String),
    #[error("vector for `{id}` has dimension {got}, expected {expected}")]
    Dimension { id: String, expected: usize, got: usize },
    #[error("vector for `{id}` is not unit length (norm {norm})")]
    NotUnit { id: String, norm: f64 },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("index file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Article id → unit-normalized embedding, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorIndex {
    dimension: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(entries: Vec<(String, EmbeddingVector)>) -> Result<Self, DistractError> {
        let mut index = Self::default();
        for (id, v) in entries {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    fn insert(&mut self, id: String, v: EmbeddingVector) -> Result<(), DistractError> {
        if self.ids.is_empty() {
            self.dimension = v.dimension();
        } else if v.dimension() != self.dimension {
            return Err(DistractError::Dimension { id, expected: self.dimension, got: v.dimension() });
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DistractError::NotUnit { id, norm });
        }
        if self.by_id.contains_key(&id) {
            return Err(DistractError::DuplicateId(id));
        }
        self.by_id.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|&i| &self.vectors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DistractError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&u32::try_from(self.dimension).expect("dimension fits u32").to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, v) in self.iter() {
            out.write_all(&u32::try_from(id.len()).expect("id fits u32").to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for x in v.values() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DistractError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DistractError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(DistractError::Format(format!("unsupported version {version}")));
        }
        let dimension = read_u32(&mut r)? as usize;
        let mut count_bytes = [0u8; 8];
        r.read_exact(&mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes);
        let mut index = Self::default();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| DistractError::Format("id is not UTF-8".into()))?;
            let mut raw = vec![0u8; dimension * 4];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            index.insert(id, EmbeddingVector::from_unit(values))?;
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(DistractError::Format("trailing bytes".into()));
        }
        index.dimension = dimension;
        Ok(index)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, DistractError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Embedding input for an article: its title, a newline, then its first
/// paragraph joined by spaces.
pub fn embedding_text(title: &str, first_paragraph: &[String]) -> String {
    format!("{title}\n{}", first_paragraph.join(" "))
}

/// Embeds every article in batches of `batch_size`. Failed batches do not
/// stop the others; their ids are reported together.
pub fn build_index(
    store: &ArticleStore,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<VectorIndex, DistractError> {
    if store.is_empty() {
        return Err(DistractError::EmptyStore);
    }
    if batch_size == 0 {
        return Err(DistractError::InvalidParameter("batch_size must be at least 1".into()));
    }
    let articles = store.articles();
    let mut entries = Vec::with_capacity(articles.len());
    let mut missing = Vec::new();
    let mut reason = String::new();
    for chunk in articles.chunks(batch_size) {
        let texts: Vec<String> = chunk
            .iter()
            .map(|a| embedding_text(&a.title, a.first_paragraph_sentences()))
            .collect();
        match gateway.embed(&texts) {
            Ok(vectors) => entries.extend(chunk.iter().map(|a| a.id.clone()).zip(vectors)),
            Err(e) => {
                tracing::warn!(error = %e, "embedding batch failed");
                reason = e.to_string();
                missing.extend(chunk.iter().map(|a| a.id.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(DistractError::MissingEmbeddings { missing, reason });
    }
    VectorIndex::new(entries)
}

/// Non-source ids ranked by descending cosine with `source`; ties break by
/// ascending id.
pub fn rank_candidates<'a>(
    source: &EmbeddingVector,
    index: &'a VectorIndex,
    exclude: &BTreeSet<&str>,
) -> Vec<(&'a str, f64)> {
    let mut ranked: Vec<(&str, f64)> = index
        .iter()
        .filter(|(id, _)| !exclude.contains(id))
        .map(|(id, v)| (id, source.cosine(v)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

/// For each source, takes the `pool_size` most similar non-source articles
/// and samples up to `per_source` of them uniformly. Returns the union.
pub fn mine(
    source_ids: &[String],
    index: &VectorIndex,
    pool_size: usize,
    per_source: usize,
    rng_seed: u64,
) -> Result<BTreeSet<String>, DistractError> {
    if per_source > MAX_PER_SOURCE {
        return Err(DistractError::InvalidParameter(format!(
            "per_source {per_source} exceeds {MAX_PER_SOURCE}"
        )));
    }
    if pool_size < per_source {
        return Err(DistractError::InvalidParameter(format!(
            "pool_size {pool_size} is smaller than per_source {per_source}"
        )));
    }
    let exclude: BTreeSet<&str> = source_ids.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = BTreeSet::new();
    for source in source_ids {
        let v = index.get(source).ok_or_else(|| DistractError::UnknownSource(source.clone()))?;
        let ranked = rank_candidates(v, index, &exclude);
        let pool: Vec<&str> = ranked.iter().take(pool_size).map(|(id, _)| *id).collect();
        out.extend(pool.choose_multiple(&mut rng, per_source).map(|id| id.to_string()));
    }
    Ok(out)
}
