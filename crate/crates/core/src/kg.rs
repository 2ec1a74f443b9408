//! Immutable triple store with interned entity/relation vocabularies and a
//! per-entity adjacency index. Construction deduplicates triples; after that
//! the graph never changes, so it is safe to share across reader threads.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

// ── Ids ─────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TripleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Directed labelled edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

// ── Vocabulary ──────────────────────────────────────────────────────────────

/// Interned string table; ids are assigned in first-appearance order.
#[derive(Debug, Default, Clone)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(id) = self.index.get(name) {
            return *id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

// ── Graph ───────────────────────────────────────────────────────────────────

/// Statistics reported by ingestion.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub triples: usize,
    pub duplicates: usize,
}

/// Supported triple file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    /// `head<TAB>relation<TAB>tail`, one triple per line.
    Tsv,
    /// One JSON object per line with keys `head`, `relation`, `tail`.
    Jsonl,
}

#[derive(Debug, Deserialize)]
struct JsonTriple {
    head: String,
    relation: String,
    tail: String,
}

/// Immutable knowledge graph.
#[derive(Debug, Default, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<TripleId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from (head, relation, tail) name triples, deduplicating
    /// exact repeats and counting them.
    pub fn from_names<'a>(items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> (Self, IngestStats) {
        let mut g = KnowledgeGraph::default();
        let mut seen: HashSet<(u32, u32, u32)> = HashSet::new();
        let mut stats = IngestStats::default();
        for (h, r, t) in items {
            let head = EntityId(g.entities.intern(h));
            let relation = RelationId(g.relations.intern(r));
            let tail = EntityId(g.entities.intern(t));
            if !seen.insert((head.0, relation.0, tail.0)) {
                stats.duplicates += 1;
                continue;
            }
            let id = TripleId(g.triples.len() as u32);
            g.triples.push(Triple { head, relation, tail });
            let need = g.entities.len();
            if g.adjacency.len() < need {
                g.adjacency.resize_with(need, Vec::new);
            }
            g.adjacency[head.index()].push(id);
            if head != tail {
                g.adjacency[tail.index()].push(id);
            }
        }
        let need = g.entities.len();
        if g.adjacency.len() < need {
            g.adjacency.resize_with(need, Vec::new);
        }
        stats.triples = g.triples.len();
        (g, stats)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triple(&self, id: TripleId) -> Result<&Triple> {
        self.triples
            .get(id.index())
            .ok_or_else(|| CoreError::Unknown { kind: "triple id", id: id.0.to_string() })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str> {
        self.entities
            .name(id.0)
            .ok_or_else(|| CoreError::Unknown { kind: "entity id", id: id.0.to_string() })
    }

    pub fn relation_name(&self, id: RelationId) -> Result<&str> {
        self.relations
            .name(id.0)
            .ok_or_else(|| CoreError::Unknown { kind: "relation id", id: id.0.to_string() })
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.id_of(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.id_of(name).map(RelationId)
    }

    /// Triples incident to an entity (either endpoint; self-loops once).
    pub fn incident(&self, e: EntityId) -> Result<&[TripleId]> {
        self.adjacency
            .get(e.index())
            .map(|v| v.as_slice())
            .ok_or_else(|| CoreError::Unknown { kind: "entity id", id: e.0.to_string() })
    }

    /// The endpoint of `t` opposite to `e`.
    pub fn other_endpoint(&self, t: &Triple, e: EntityId) -> EntityId {
        if t.head == e {
            t.tail
        } else {
            t.head
        }
    }

    /// Every triple with at least one endpoint in `entity_set`, deduplicated,
    /// in ascending triple-id order.
    pub fn frontier_triples(&self, entity_set: &BTreeSet<EntityId>) -> Result<Vec<TripleId>> {
        let mut out: Vec<TripleId> = Vec::new();
        for e in entity_set {
            out.extend_from_slice(self.incident(*e)?);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Undirected BFS distances from a set of sources. `None` = unreachable.
    pub fn bfs_distances(&self, sources: &[EntityId]) -> Result<Vec<Option<u32>>> {
        let mut dist: Vec<Option<u32>> = vec![None; self.entity_count()];
        let mut queue = VecDeque::new();
        for s in sources {
            if s.index() >= self.entity_count() {
                return Err(CoreError::Unknown { kind: "entity id", id: s.0.to_string() });
            }
            if dist[s.index()].is_none() {
                dist[s.index()] = Some(0);
                queue.push_back(*s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()].unwrap();
            for tid in &self.adjacency[v.index()] {
                let t = &self.triples[tid.index()];
                let u = self.other_endpoint(t, v);
                if dist[u.index()].is_none() {
                    dist[u.index()] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        Ok(dist)
    }

    /// Serialises the graph as TSV in triple-id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(self.entities.name(t.head.0).unwrap_or(""));
            out.push('\t');
            out.push_str(self.relations.name(t.relation.0).unwrap_or(""));
            out.push('\t');
            out.push_str(self.entities.name(t.tail.0).unwrap_or(""));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| CoreError::io(path.display().to_string(), e))
    }
}

/// Reads a triple file in the given format.
pub fn ingest_triples(path: &Path, format: TripleFormat) -> Result<(KnowledgeGraph, IngestStats)> {
    let file = fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(String, String, String)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match format {
            TripleFormat::Tsv => {
                let mut parts = line.split('\t');
                match (parts.next(), parts.next(), parts.next(), parts.next()) {
                    (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                        (h.to_string(), r.to_string(), t.to_string())
                    }
                    _ => {
                        return Err(CoreError::Parse {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: "expected head<TAB>relation<TAB>tail".to_string(),
                        })
                    }
                }
            }
            TripleFormat::Jsonl => {
                let jt: JsonTriple = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("bad triple object: {e}"),
                })?;
                (jt.head, jt.relation, jt.tail)
            }
        };
        rows.push(row);
    }
    let (g, stats) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
    Ok((g, stats))
}

/// Guesses the triple format from a file extension, defaulting to TSV.
pub fn format_for_path(path: &Path) -> TripleFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => TripleFormat::Jsonl,
        _ => TripleFormat::Tsv,
    }
}
