//! Word vectors for object labels, sentence vectors for text features, and the
//! label hierarchy used when an object name is missing from the word table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{ensure_finite, read_json};

/// Dimension of a word vector.
pub const WORD_DIM: usize = 300;
/// Dimension of a sentence vector.
pub const TEXT_DIM: usize = 768;

/// Token → 300-dimensional word vector.
#[derive(Debug, Clone, Default)]
pub struct WordEmbeddingTable {
    entries: HashMap<String, Vec<f64>>,
}

impl WordEmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != WORD_DIM {
            return Err(Error::dims(format!("word vector {token:?}"), WORD_DIM, vector.len()));
        }
        ensure_finite(&format!("word vector {token:?}"), &vector)?;
        self.entries.insert(token, vector);
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses GloVe-style text: a token followed by 300 space-separated floats per
    /// line. Tokens may themselves contain spaces; the last 300 fields are the vector.
    pub fn from_glove_reader(reader: impl BufRead) -> Result<Self> {
        let mut table = Self::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<glove>", e))?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < WORD_DIM + 1 {
                return Err(Error::InvalidValue(format!(
                    "word table line {}: expected a token and {WORD_DIM} values, found {} fields",
                    lineno + 1,
                    fields.len()
                )));
            }
            let split = fields.len() - WORD_DIM;
            let token = fields[..split].join(" ");
            let vector = fields[split..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidValue(format!("word table line {}: {e}", lineno + 1)))?;
            table.insert(token, vector)?;
        }
        Ok(table)
    }

    pub fn load_glove(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_glove_reader(BufReader::new(file))
    }

    /// Walks the parent chain starting at `token` and returns the first label that
    /// has a word vector. A revisited label means the hierarchy has a cycle.
    pub fn resolve_with_fallback<'a>(
        &'a self,
        hierarchy: &'a LabelHierarchy,
        token: &'a str,
    ) -> Result<(&'a str, &'a [f64])> {
        let mut visited = HashSet::new();
        let mut current = token;
        loop {
            if let Some(v) = self.lookup(current) {
                return Ok((current, v));
            }
            if !visited.insert(current) {
                return Err(Error::HierarchyCycle(current.to_string()));
            }
            match hierarchy.parent(current) {
                Some(parent) => current = parent,
                None => return Err(Error::UnresolvableLabel(token.to_string())),
            }
        }
    }
}

/// Child label → parent label. Roots have no entry.
#[derive(Debug, Clone, Default)]
pub struct LabelHierarchy {
    parent: HashMap<String, String>,
}

impl LabelHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        Self {
            parent: pairs.into_iter().map(|(c, p)| (c.into(), p.into())).collect(),
        }
    }

    /// Loads `{ "<child>": "<parent>" }`.
    pub fn load(path: &Path) -> Result<Self> {
        let map: BTreeMap<String, String> = read_json(path)?;
        Ok(Self::from_pairs(map))
    }

    pub fn parent(&self, label: &str) -> Option<&str> {
        self.parent.get(label).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Anything that turns a text feature into a sentence vector.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Sentence vectors of length 768, either looked up in an exported table or
/// produced by a deterministic hash-seeded stub.
#[derive(Debug, Clone)]
pub enum SentenceEmbedder {
    Precomputed(HashMap<String, Vec<f64>>),
    Stub,
}

impl SentenceEmbedder {
    pub fn precomputed(table: HashMap<String, Vec<f64>>) -> Result<Self> {
        for (text, v) in &table {
            if v.len() != TEXT_DIM {
                return Err(Error::dims(format!("sentence vector {text:?}"), TEXT_DIM, v.len()));
            }
            ensure_finite(&format!("sentence vector {text:?}"), v)?;
        }
        Ok(Self::Precomputed(table))
    }

    /// Loads `{ "<exact text>": [768 floats] }`.
    pub fn load_precomputed(path: &Path) -> Result<Self> {
        Self::precomputed(read_json(path)?)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        match self {
            Self::Precomputed(table) => table
                .get(text)
                .cloned()
                .ok_or_else(|| Error::MissingPrecomputedEntry(text.to_string())),
            Self::Stub => Ok(stub_vector(text)),
        }
    }
}

impl TextEncoder for SentenceEmbedder {
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        self.embed(text)
    }
}

/// Unit-norm vector drawn uniformly from [-1, 1)^768 with a generator seeded by
/// the first 8 bytes of SHA-256 over the UTF-8 text. Only IEEE basic operations
/// are involved, so the output is bit-identical across platforms.
fn stub_vector(text: &str) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut seed = [0u8; 8];
    seed.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed));
    let mut v: Vec<f64> = (0..TEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}
