//! Train/test contamination checks: word shingles, MinHash signatures, LSH
//! banding for candidate retrieval, exact Jaccard for confirmation.
//!
//! Hash `i` of the family is `h_i(x) = (a_i·x + b_i) mod (2^61 − 1)` over
//! the xxh3 hash of the shingle, with `a_i ∈ [1, p)` and `b_i ∈ [0, p)`
//! drawn from ChaCha8 seeded by the signature seed.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

const MERSENNE_61: u64 = (1 << 61) - 1;

pub const DEFAULT_SHINGLE: usize = 3;
pub const DEFAULT_NUM_PERMS: usize = 128;
pub const DEFAULT_BANDS: usize = 32;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum LeakError {
    #[error("cannot sign an empty shingle set")]
    EmptyShingles,
    #[error("shingle size must be at least 1")]
    ZeroShingle,
    #[error("num_perms must be positive")]
    ZeroPerms,
    #[error("{bands} bands do not divide {num_perms} permutations")]
    BadBanding { bands: usize, num_perms: usize },
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("signatures differ in (num_perms, seed)")]
    Incomparable,
}

/// Lowercased word `n`-grams with punctuation removed, as a set.
pub fn shingle(text: &str, n: usize) -> BTreeSet<String> {
    assert!(n >= 1, "shingle size must be at least 1");
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.len() + b.len() - a.intersection(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

/// The seeded universal hash family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamily {
    seed: u64,
    coefficients: Vec<(u64, u64)>,
}

impl HashFamily {
    pub fn new(num_perms: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients = (0..num_perms)
            .map(|_| (rng.random_range(1..MERSENNE_61), rng.random_range(0..MERSENNE_61)))
            .collect();
        Self { seed, coefficients }
    }

    pub fn num_perms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn sign<'a>(
        &self,
        shingles: impl IntoIterator<Item = &'a String>,
    ) -> Result<MinHashSignature, LeakError> {
        let mut values = vec![u64::MAX; self.coefficients.len()];
        let mut any = false;
        for s in shingles {
            any = true;
            let x = xxh3_64(s.as_bytes()) % MERSENNE_61;
            for (v, &(a, b)) in values.iter_mut().zip(&self.coefficients) {
                let h = mod_mersenne(a as u128 * x as u128 + b as u128);
                if h < *v {
                    *v = h;
                }
            }
        }
        if !any {
            return Err(LeakError::EmptyShingles);
        }
        Ok(MinHashSignature { values, num_perms: self.coefficients.len(), seed: self.seed })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub num_perms: usize,
    pub seed: u64,
}

impl MinHashSignature {
    /// Fraction of agreeing positions.
    pub fn estimate(&self, other: &Self) -> Result<f64, LeakError> {
        if self.num_perms != other.num_perms || self.seed != other.seed {
            return Err(LeakError::Incomparable);
        }
        let same = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.num_perms as f64)
    }
}

pub fn minhash(
    shingles: &BTreeSet<String>,
    num_perms: usize,
    seed: u64,
) -> Result<MinHashSignature, LeakError> {
    if num_perms == 0 {
        return Err(LeakError::ZeroPerms);
    }
    HashFamily::new(num_perms, seed).sign(shingles)
}

/// Banded LSH over signatures; items sharing any band bucket are candidates.
#[derive(Debug, Clone)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    tables: Vec<HashMap<u64, Vec<usize>>>,
}

impl LshIndex {
    pub fn new(bands: usize, num_perms: usize) -> Result<Self, LeakError> {
        if bands == 0 || num_perms % bands != 0 {
            return Err(LeakError::BadBanding { bands, num_perms });
        }
        Ok(Self { bands, rows: num_perms / bands, tables: vec![HashMap::new(); bands] })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Similarity at which the candidate probability `1 − (1 − s^r)^b` is
    /// steepest, approximately `(1/b)^(1/r)`.
    pub fn s_curve_threshold(&self) -> f64 {
        (1.0 / self.bands as f64).powf(1.0 / self.rows as f64)
    }

    fn band_keys<'a>(&'a self, sig: &'a MinHashSignature) -> impl Iterator<Item = u64> + 'a {
        sig.values.chunks(self.rows).enumerate().map(|(b, rows)| {
            let bytes: Vec<u8> = rows.iter().flat_map(|v| v.to_le_bytes()).collect();
            xxh3_64_with_seed(&bytes, b as u64)
        })
    }

    pub fn insert(&mut self, item: usize, sig: &MinHashSignature) {
        let keys: Vec<u64> = self.band_keys(sig).collect();
        for (table, key) in self.tables.iter_mut().zip(keys) {
            table.entry(key).or_default().push(item);
        }
    }

    /// Items sharing at least one band with `sig`, ascending.
    pub fn query(&self, sig: &MinHashSignature) -> BTreeSet<usize> {
        self.band_keys(sig)
            .zip(&self.tables)
            .filter_map(|(key, table)| table.get(&key))
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakConfig {
    pub threshold: f64,
    pub num_perms: usize,
    pub bands: usize,
    pub shingle_size: usize,
    pub seed: u64,
}

impl Default for LeakConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            num_perms: DEFAULT_NUM_PERMS,
            bands: DEFAULT_BANDS,
            shingle_size: DEFAULT_SHINGLE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakFlag {
    pub train_id: String,
    pub test_id: String,
    pub exact_jaccard: f64,
    pub estimated_jaccard: f64,
}

/// A document to compare: an id and its full text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakDoc {
    pub id: String,
    pub text: String,
}

impl LeakDoc {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

struct Prepared {
    shingles: BTreeSet<String>,
    signature: MinHashSignature,
}

fn prepare(docs: &[LeakDoc], family: &HashFamily, n: usize) -> Vec<Option<Prepared>> {
    docs.par_iter()
        .map(|d| {
            let shingles = shingle(&d.text, n);
            match family.sign(&shingles) {
                Ok(signature) => Some(Prepared { shingles, signature }),
                Err(_) => {
                    tracing::warn!(id = %d.id, "document too short to shingle; skipped");
                    None
                }
            }
        })
        .collect()
}

/// Pairs (train, test) whose exact shingle Jaccard reaches the threshold,
/// among LSH candidates. Sorted by descending Jaccard, then ids.
pub fn flag_leaks(
    train: &[LeakDoc],
    test: &[LeakDoc],
    config: &LeakConfig,
) -> Result<Vec<LeakFlag>, LeakError> {
    if !(config.threshold > 0.0 && config.threshold <= 1.0) {
        return Err(LeakError::BadThreshold(config.threshold));
    }
    if config.shingle_size == 0 {
        return Err(LeakError::ZeroShingle);
    }
    if config.num_perms == 0 {
        return Err(LeakError::ZeroPerms);
    }
    let mut lsh = LshIndex::new(config.bands, config.num_perms)?;
    let family = HashFamily::new(config.num_perms, config.seed);
    let train_prep = prepare(train, &family, config.shingle_size);
    let test_prep = prepare(test, &family, config.shingle_size);
    for (i, p) in train_prep.iter().enumerate() {
        if let Some(p) = p {
            lsh.insert(i, &p.signature);
        }
    }
    let mut flags: Vec<LeakFlag> = test_prep
        .par_iter()
        .enumerate()
        .filter_map(|(j, p)| p.as_ref().map(|p| (j, p)))
        .flat_map_iter(|(j, tp)| {
            lsh.query(&tp.signature)
                .into_iter()
                .filter_map(|i| {
                    let trp = train_prep[i].as_ref().expect("indexed docs are prepared");
                    let exact = jaccard(&trp.shingles, &tp.shingles);
                    (exact >= config.threshold).then(|| LeakFlag {
                        train_id: train[i].id.clone(),
                        test_id: test[j].id.clone(),
                        exact_jaccard: exact,
                        estimated_jaccard: trp.signature.estimate(&tp.signature).expect("same family"),
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    flags.sort_by(|a, b| {
        b.exact_jaccard
            .total_cmp(&a.exact_jaccard)
            .then_with(|| a.train_id.cmp(&b.train_id))
            .then_with(|| a.test_id.cmp(&b.test_id))
    });
    Ok(flags)
}

/// Test ids involved in any flag.
pub fn flagged_test_ids(flags: &[LeakFlag]) -> HashSet<&str> {
    flags.iter().map(|f| f.test_id.as_str()).collect()
}

pub const CSV_HEADER: &str = "train_id,test_id,exact_jaccard,estimated_jaccard";

pub fn render_csv(flags: &[LeakFlag]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for f in flags {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            f.train_id, f.test_id, f.exact_jaccard, f.estimated_jaccard
        );
    }
    out
}
