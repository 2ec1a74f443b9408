//! Deterministic embedding provider.
//!
//! Two modes: `HashSeeded` derives a vector for any string from a
//! platform-independent FNV-1a hash feeding a ChaCha8 stream, so the same
//! (string, dim, seed) always gives the same vector on any machine.
//! `Precomputed` reads vectors from a text file. Multi-token strings embed as
//! the mean of their whitespace-token vectors, which keeps question and
//! entity embeddings compositional: shared tokens produce correlated vectors.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
enum Mode {
    HashSeeded { seed: u64 },
    Precomputed { vectors: HashMap<String, Vec<f64>> },
}

/// Maps names, relations, and question text to fixed-size vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    dim: usize,
    mode: Mode,
}

impl EmbeddingProvider {
    pub const DEFAULT_DIM: usize = 512;

    /// Hash-seeded provider; vectors are unit-length per token.
    pub fn hash_seeded(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::config("embedding dimension must be positive"));
        }
        Ok(EmbeddingProvider { dim, mode: Mode::HashSeeded { seed } })
    }

    /// Loads a precomputed table: a `<count> <dim>` header line, then one
    /// `<name> <v1> ... <vdim>` line per entry.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let perr = |line: usize, message: String| CoreError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };

        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(1, "missing header line".into()))
            .and_then(|(i, l)| l.map(|l| (i, l)).map_err(|e| perr(1, e.to_string())))?;
        let mut hp = header.split_whitespace();
        let count: usize = hp
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(1, "header must be `<count> <dim>`".into()))?;
        let dim: usize = hp
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(1, "header must be `<count> <dim>`".into()))?;
        if hp.next().is_some() {
            return Err(perr(1, "header must be `<count> <dim>`".into()));
        }
        if dim == 0 {
            return Err(perr(1, "dimension must be positive".into()));
        }

        let mut vectors = HashMap::with_capacity(count);
        for (i, line) in lines {
            let line = line.map_err(|e| perr(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| perr(i + 1, "missing name".into()))?
                .to_string();
            let values: std::result::Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
            let values = values.map_err(|e| perr(i + 1, format!("bad float: {e}")))?;
            if values.len() != dim {
                return Err(perr(i + 1, format!("expected {dim} values, found {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(perr(i + 1, "non-finite embedding value".into()));
            }
            vectors.insert(name, values);
        }
        if vectors.len() != count {
            return Err(perr(1, format!("header count {count} but {} entries found", vectors.len())));
        }
        Ok(EmbeddingProvider { dim, mode: Mode::Precomputed { vectors } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, token: &str, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }

    /// Embeds any text: mean of whitespace-token vectors in hash mode, table
    /// lookup by the full string in precomputed mode.
    pub fn text_vector(&self, text: &str) -> Result<Vec<f64>> {
        match &self.mode {
            Mode::HashSeeded { seed } => {
                let tokens: Vec<&str> = text.split_whitespace().collect();
                if tokens.is_empty() {
                    return Err(CoreError::domain("cannot embed empty text"));
                }
                let mut acc = vec![0.0; self.dim];
                for tok in &tokens {
                    for (a, v) in acc.iter_mut().zip(self.token_vector(tok, *seed)) {
                        *a += v;
                    }
                }
                let n = tokens.len() as f64;
                for a in acc.iter_mut() {
                    *a /= n;
                }
                Ok(acc)
            }
            Mode::Precomputed { vectors } => vectors
                .get(text)
                .cloned()
                .ok_or_else(|| CoreError::Unknown { kind: "embedding name", id: text.to_string() }),
        }
    }

    pub fn entity_vector(&self, g: &KnowledgeGraph, id: EntityId) -> Result<Vec<f64>> {
        self.text_vector(g.entity_name(id)?)
    }

    pub fn relation_vector(&self, g: &KnowledgeGraph, id: RelationId) -> Result<Vec<f64>> {
        self.text_vector(g.relation_name(id)?)
    }

    pub fn question_vector(&self, question: &str) -> Result<Vec<f64>> {
        self.text_vector(question)
    }

    /// Precomputes dense tables for every entity and relation in a graph.
    pub fn materialize(&self, g: &KnowledgeGraph) -> Result<EmbeddingTable> {
        let mut entities = Vec::with_capacity(g.entity_count());
        for i in 0..g.entity_count() {
            entities.push(self.entity_vector(g, EntityId(i as u32))?);
        }
        let mut relations = Vec::with_capacity(g.relation_count());
        for i in 0..g.relation_count() {
            relations.push(self.relation_vector(g, RelationId(i as u32))?);
        }
        Ok(EmbeddingTable { dim: self.dim, entities, relations })
    }
}

/// Dense per-id embedding tables for one graph.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entities: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn entity(&self, id: EntityId) -> Result<&[f64]> {
        self.entities
            .get(id.index())
            .map(|v| v.as_slice())
            .ok_or_else(|| CoreError::Unknown { kind: "entity id", id: id.0.to_string() })
    }

    pub fn relation(&self, id: RelationId) -> Result<&[f64]> {
        self.relations
            .get(id.index())
            .map(|v| v.as_slice())
            .ok_or_else(|| CoreError::Unknown { kind: "relation id", id: id.0.to_string() })
    }
}
