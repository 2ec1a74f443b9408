//! Attention-guided subgraph retrieval.
//!
//! Retrieval keeps a growing frontier of entities. Each layer scores every
//! non-pruned triple incident to the frontier with a linear head over the
//! concatenated (source, target, relation, question) embeddings, normalised
//! by softmax per source entity. Low-attention edges can be pruned from
//! expansion, surviving edges extend the frontier and deliver messages that
//! refresh entity embeddings, and the best attention value seen per edge
//! accumulates into a probability vector. A differentiable binary-concrete
//! mask is then sampled per edge and the top edges by probability form the
//! final subgraph.
//!
//! Everything numeric is recorded on a [`Tape`], so both the mask and the
//! attention weights stay differentiable end to end.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph, TripleId};
use crate::numerics::{NodeId, ParamSet, Tape, Tensor};

/// Floor used when clamping probabilities before a logit.
pub const PROB_CLAMP: f64 = 1e-6;

// ── Configuration ───────────────────────────────────────────────────────────

/// How edges are dropped from expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Drop edges with attention <= sigma once enough edges fall below sigma.
    Threshold,
    /// Keep only the k highest-attention edges whenever more are eligible.
    TopK { k: usize },
    /// Never drop edges.
    Disabled,
}

/// Retriever hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverHyper {
    /// Attention threshold for pruning.
    pub sigma: f64,
    /// Pruning fires only when more than this many frontier edges score
    /// below sigma.
    pub prune_trigger_budget: usize,
    /// Number of grow/prune layers to run.
    pub num_layers: usize,
    /// Mask sampling temperature.
    pub temperature: f64,
    pub prune_mode: PruneMode,
    /// Refresh entity embeddings with message passing after each layer.
    pub entity_update: bool,
}

impl Default for RetrieverHyper {
    fn default() -> Self {
        RetrieverHyper {
            sigma: 0.1,
            prune_trigger_budget: 16,
            num_layers: 3,
            temperature: 1.0,
            prune_mode: PruneMode::Threshold,
            entity_update: true,
        }
    }
}

impl RetrieverHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(CoreError::config(format!("sigma must lie in (0,1), got {}", self.sigma)));
        }
        if self.num_layers < 1 {
            return Err(CoreError::config("num_layers must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let PruneMode::TopK { k } = self.prune_mode {
            if k == 0 {
                return Err(CoreError::config("top_k pruning requires k >= 1"));
            }
        }
        Ok(())
    }
}

// ── Parameters ──────────────────────────────────────────────────────────────

pub const SCORE_W: &str = "score_w";
pub const SCORE_B: &str = "score_b";
pub const UPDATE_SELF: &str = "update_self";
pub const UPDATE_NEIGHBOR: &str = "update_neighbor";

/// Trainable retriever parameters: the attention scorer over concatenated
/// features and the two entity-update weight matrices.
#[derive(Debug, Clone)]
pub struct RetrieverParams {
    pub set: ParamSet,
    pub dim: usize,
}

impl RetrieverParams {
    pub fn init(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        use crate::numerics::{init_identity_matrix, init_matrix, init_vector};
        let mut set = ParamSet::new();
        let scale = 1.0 / ((4 * dim) as f64).sqrt();
        set.insert(SCORE_W, init_matrix(rng, 1, 4 * dim, scale))?;
        set.insert(SCORE_B, init_vector(rng, 1, 0.0))?;
        set.insert(UPDATE_SELF, init_identity_matrix(rng, dim, 0.02))?;
        set.insert(UPDATE_NEIGHBOR, init_matrix(rng, dim, dim, 0.3 / (dim as f64).sqrt()))?;
        Ok(RetrieverParams { set, dim })
    }
}

/// Tape bindings for the retriever parameters.
#[derive(Debug, Clone, Copy)]
pub struct RetrieverNodes {
    pub score_w: NodeId,
    pub score_b: NodeId,
    pub update_self: NodeId,
    pub update_neighbor: NodeId,
}

impl RetrieverNodes {
    pub fn bind(tape: &mut Tape, params: &RetrieverParams, trainable: bool) -> Result<Self> {
        Ok(RetrieverNodes {
            score_w: params.set.bind(tape, SCORE_W, trainable)?,
            score_b: params.set.bind(tape, SCORE_B, trainable)?,
            update_self: params.set.bind(tape, UPDATE_SELF, trainable)?,
            update_neighbor: params.set.bind(tape, UPDATE_NEIGHBOR, trainable)?,
        })
    }

    /// Name-to-node pairs for gradient extraction.
    pub fn bindings(&self) -> [(&'static str, NodeId); 4] {
        [
            (SCORE_W, self.score_w),
            (SCORE_B, self.score_b),
            (UPDATE_SELF, self.update_self),
            (UPDATE_NEIGHBOR, self.update_neighbor),
        ]
    }
}

// ── State ───────────────────────────────────────────────────────────────────

/// Per-layer trace record for the export consumed by the eval tooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub frontier_entities: usize,
    pub eligible_triples: usize,
    pub low_alpha_triples: usize,
    pub pruned_triples: usize,
    pub new_entities: usize,
}

/// Full per-query trace: layer statistics plus final per-edge probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub layers: Vec<LayerTrace>,
    /// (triple id, accumulated probability), ascending by id.
    pub edge_probs: Vec<(u32, f64)>,
}

/// Mutable retrieval state threaded through the layers.
#[derive(Debug)]
pub struct RetrievalState {
    /// Entities eligible to act as expansion sources (E_t, cumulative).
    pub frontier: BTreeSet<EntityId>,
    /// Contextualised embedding node per visited entity.
    pub ctx: BTreeMap<EntityId, NodeId>,
    /// Latest attention value per scored triple.
    pub edge_scores: BTreeMap<TripleId, f64>,
    /// Accumulated probability node per scored triple (element-wise max).
    pub edge_probs: BTreeMap<TripleId, NodeId>,
    /// Edges dropped from expansion.
    pub pruned: BTreeSet<TripleId>,
    pub layer_index: usize,
    pub exhausted: bool,
    pub layer_traces: Vec<LayerTrace>,
}

impl RetrievalState {
    /// Starts a retrieval from seed entities, installing their initial
    /// embeddings on the tape.
    pub fn new(
        tape: &mut Tape,
        g: &KnowledgeGraph,
        table: &EmbeddingTable,
        seeds: &[EntityId],
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(CoreError::domain("retrieval requires at least one seed entity"));
        }
        let mut frontier = BTreeSet::new();
        let mut ctx = BTreeMap::new();
        for s in seeds {
            g.entity_name(*s)?;
            frontier.insert(*s);
            if !ctx.contains_key(s) {
                let leaf = tape.leaf(Tensor::vector(table.entity(*s)?.to_vec())?);
                ctx.insert(*s, leaf);
            }
        }
        Ok(RetrievalState {
            frontier,
            ctx,
            edge_scores: BTreeMap::new(),
            edge_probs: BTreeMap::new(),
            pruned: BTreeSet::new(),
            layer_index: 0,
            exhausted: false,
            layer_traces: Vec::new(),
        })
    }

    /// Current probability value for an edge.
    pub fn prob_value(&self, tape: &Tape, t: TripleId) -> Option<f64> {
        self.edge_probs.get(&t).map(|n| tape.scalar_value(*n))
    }

    /// Final trace snapshot.
    pub fn trace(&self, tape: &Tape) -> RetrievalTrace {
        RetrievalTrace {
            layers: self.layer_traces.clone(),
            edge_probs: self
                .edge_probs
                .iter()
                .map(|(t, n)| (t.0, tape.scalar_value(*n)))
                .collect(),
        }
    }
}

/// Immutable context shared by the retrieval operations.
pub struct RetrieverCtx<'a> {
    pub g: &'a KnowledgeGraph,
    pub table: &'a EmbeddingTable,
    /// Question embedding node (length d).
    pub question: NodeId,
    pub nodes: RetrieverNodes,
    pub hyper: RetrieverHyper,
}

// ── Attention ───────────────────────────────────────────────────────────────

/// One directional attention assignment: `source` looked at `triple` and saw
/// `target` on the other end.
#[derive(Debug, Clone, Copy)]
pub struct ScoredPair {
    pub source: EntityId,
    pub target: EntityId,
    pub triple: TripleId,
    pub alpha: NodeId,
}

/// Attention output for one layer.
#[derive(Debug, Clone)]
pub struct LayerScores {
    pub pairs: Vec<ScoredPair>,
    /// Per-triple attention node; for edges scored from both endpoints this
    /// is the element-wise max of the two directions.
    pub per_triple: BTreeMap<TripleId, NodeId>,
}

fn ctx_or_init(
    tape: &mut Tape,
    state: &mut RetrievalState,
    rcx: &RetrieverCtx<'_>,
    e: EntityId,
) -> Result<NodeId> {
    if let Some(n) = state.ctx.get(&e) {
        return Ok(*n);
    }
    let leaf = tape.leaf(Tensor::vector(rcx.table.entity(e)?.to_vec())?);
    state.ctx.insert(e, leaf);
    Ok(leaf)
}

/// Scores every eligible frontier triple and normalises per source entity.
///
/// Eligible means incident to the frontier and not previously pruned. Errors
/// with a retrieval-exhausted domain error when nothing is eligible.
pub fn attention_scores(
    tape: &mut Tape,
    state: &mut RetrievalState,
    rcx: &RetrieverCtx<'_>,
) -> Result<LayerScores> {
    let eligible: Vec<TripleId> = rcx
        .g
        .frontier_triples(&state.frontier)?
        .into_iter()
        .filter(|t| !state.pruned.contains(t))
        .collect();
    if eligible.is_empty() {
        return Err(CoreError::domain("retrieval exhausted: no eligible frontier triples"));
    }
    let eligible_set: BTreeSet<TripleId> = eligible.iter().copied().collect();

    let sources: Vec<EntityId> = state.frontier.iter().copied().collect();
    let mut pairs: Vec<ScoredPair> = Vec::new();
    let mut per_triple: BTreeMap<TripleId, NodeId> = BTreeMap::new();

    for src in sources {
        let incident: Vec<TripleId> = rcx
            .g
            .incident(src)?
            .iter()
            .copied()
            .filter(|t| eligible_set.contains(t))
            .collect();
        if incident.is_empty() {
            continue;
        }
        let src_ctx = ctx_or_init(tape, state, rcx, src)?;
        let mut raw: Vec<NodeId> = Vec::with_capacity(incident.len());
        let mut targets: Vec<EntityId> = Vec::with_capacity(incident.len());
        for tid in &incident {
            let triple = *rcx.g.triple(*tid)?;
            let other = rcx.g.other_endpoint(&triple, src);
            let tgt_ctx = ctx_or_init(tape, state, rcx, other)?;
            let rel = tape.leaf(Tensor::vector(rcx.table.relation(triple.relation)?.to_vec())?);
            let feat = tape.concat(&[src_ctx, tgt_ctx, rel, rcx.question])?;
            let score = tape.linear(rcx.nodes.score_w, feat, rcx.nodes.score_b)?;
            raw.push(score);
            targets.push(other);
        }
        let stacked = tape.concat(&raw)?;
        let alphas = tape.softmax(stacked)?;
        for (i, tid) in incident.iter().enumerate() {
            let alpha = tape.index(alphas, i)?;
            pairs.push(ScoredPair { source: src, target: targets[i], triple: *tid, alpha });
            per_triple
                .entry(*tid)
                .and_modify(|existing| {
                    *existing = tape.max_pair(*existing, alpha).expect("scalar max");
                })
                .or_insert(alpha);
        }
    }
    Ok(LayerScores { pairs, per_triple })
}

// ── Entity update ───────────────────────────────────────────────────────────

/// Message-passing refresh of context embeddings: each updated entity gets
/// `W1 h + W2 sum(alpha * h_source)` over its surviving incoming pairs, all
/// read from the pre-update embeddings.
pub fn update_entity_embeddings(
    tape: &mut Tape,
    state: &mut RetrievalState,
    rcx: &RetrieverCtx<'_>,
    survivors: &[ScoredPair],
) -> Result<()> {
    let mut inbox: BTreeMap<EntityId, Vec<NodeId>> = BTreeMap::new();
    let mut update_set: BTreeSet<EntityId> = BTreeSet::new();
    for pair in survivors {
        let src_ctx = *state
            .ctx
            .get(&pair.source)
            .ok_or_else(|| CoreError::domain("survivor source has no context embedding"))?;
        let msg = tape.scale_by(src_ctx, pair.alpha)?;
        inbox.entry(pair.target).or_default().push(msg);
        update_set.insert(pair.source);
        update_set.insert(pair.target);
    }
    let mut refreshed: Vec<(EntityId, NodeId)> = Vec::with_capacity(update_set.len());
    for e in update_set {
        let old = *state
            .ctx
            .get(&e)
            .ok_or_else(|| CoreError::domain("updated entity has no context embedding"))?;
        let self_term = tape.matvec(rcx.nodes.update_self, old)?;
        let new = match inbox.get(&e) {
            Some(msgs) => {
                let summed = tape.add_n(msgs)?;
                let neigh = tape.matvec(rcx.nodes.update_neighbor, summed)?;
                tape.add(self_term, neigh)?
            }
            None => self_term,
        };
        refreshed.push((e, new));
    }
    for (e, n) in refreshed {
        state.ctx.insert(e, n);
    }
    Ok(())
}

// ── Grow/prune ──────────────────────────────────────────────────────────────

/// Result of one layer.
#[derive(Debug)]
pub struct GrowOutcome {
    pub scores: LayerScores,
    /// Triples that survived pruning this layer, ascending id.
    pub survivors: Vec<TripleId>,
}

/// Runs one grow/prune layer. Returns `None` (with the exhausted flag set and
/// the state otherwise unchanged) when no edges are eligible or none survive.
pub fn grow_prune_step(
    tape: &mut Tape,
    state: &mut RetrievalState,
    rcx: &RetrieverCtx<'_>,
) -> Result<Option<GrowOutcome>> {
    let frontier_before = state.frontier.len();
    let scores = match attention_scores(tape, state, rcx) {
        Ok(s) => s,
        Err(CoreError::Domain(_)) => {
            state.exhausted = true;
            return Ok(None);
        }
        Err(e) => return Err(e),
    };

    let alpha_vals: Vec<(TripleId, f64)> = scores
        .per_triple
        .iter()
        .map(|(t, n)| (*t, tape.scalar_value(*n)))
        .collect();
    let low_count = alpha_vals.iter().filter(|(_, a)| *a < rcx.hyper.sigma).count();

    let survivors: Vec<TripleId> = match rcx.hyper.prune_mode {
        PruneMode::Disabled => alpha_vals.iter().map(|(t, _)| *t).collect(),
        PruneMode::Threshold => {
            if low_count > rcx.hyper.prune_trigger_budget {
                alpha_vals
                    .iter()
                    .filter(|(_, a)| *a > rcx.hyper.sigma)
                    .map(|(t, _)| *t)
                    .collect()
            } else {
                alpha_vals.iter().map(|(t, _)| *t).collect()
            }
        }
        PruneMode::TopK { k } => {
            if alpha_vals.len() > k {
                let mut ranked = alpha_vals.clone();
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut keep: Vec<TripleId> = ranked.into_iter().take(k).map(|(t, _)| t).collect();
                keep.sort_unstable();
                keep
            } else {
                alpha_vals.iter().map(|(t, _)| *t).collect()
            }
        }
    };

    if survivors.is_empty() {
        state.exhausted = true;
        return Ok(None);
    }

    let survivor_set: BTreeSet<TripleId> = survivors.iter().copied().collect();
    let pruned_now: Vec<TripleId> = alpha_vals
        .iter()
        .map(|(t, _)| *t)
        .filter(|t| !survivor_set.contains(t))
        .collect();
    state.pruned.extend(pruned_now.iter().copied());

    // Accumulate probabilities for surviving edges only; pruned edges keep
    // whatever they earned in earlier layers.
    for tid in &survivors {
        let alpha = scores.per_triple[tid];
        state.edge_scores.insert(*tid, tape.scalar_value(alpha));
        match state.edge_probs.get(tid) {
            Some(old) => {
                let merged = tape.max_pair(*old, alpha)?;
                state.edge_probs.insert(*tid, merged);
            }
            None => {
                state.edge_probs.insert(*tid, alpha);
            }
        }
    }

    let survivor_pairs: Vec<ScoredPair> = scores
        .pairs
        .iter()
        .copied()
        .filter(|p| survivor_set.contains(&p.triple))
        .collect();

    if rcx.hyper.entity_update {
        update_entity_embeddings(tape, state, rcx, &survivor_pairs)?;
    }

    for pair in &survivor_pairs {
        state.frontier.insert(pair.target);
    }

    state.layer_traces.push(LayerTrace {
        layer: state.layer_index,
        frontier_entities: frontier_before,
        eligible_triples: alpha_vals.len(),
        low_alpha_triples: low_count,
        pruned_triples: state.pruned.len(),
        new_entities: state.frontier.len() - frontier_before,
    });
    state.layer_index += 1;
    Ok(Some(GrowOutcome { scores, survivors }))
}

/// Runs up to `layers` grow/prune layers, stopping early when exhausted.
pub fn run_retrieval(
    tape: &mut Tape,
    state: &mut RetrievalState,
    rcx: &RetrieverCtx<'_>,
    layers: usize,
) -> Result<()> {
    for _ in 0..layers {
        if grow_prune_step(tape, state, rcx)?.is_none() {
            break;
        }
    }
    Ok(())
}

// ── Mask sampling ───────────────────────────────────────────────────────────

/// Noise assignment for mask sampling: a fixed epsilon for every edge
/// (deterministic evaluation uses 0.5), an explicit per-edge table, or a
/// seeded per-edge draw that replays identically on a second tape without
/// knowing the edge set up front.
#[derive(Debug, Clone)]
pub enum NoisePlan {
    Fixed(f64),
    PerEdge(BTreeMap<TripleId, f64>),
    Seeded(u64),
}

impl NoisePlan {
    pub fn eps(&self, t: TripleId) -> f64 {
        let raw = match self {
            NoisePlan::Fixed(e) => *e,
            NoisePlan::PerEdge(map) => map.get(&t).copied().unwrap_or(0.5),
            NoisePlan::Seeded(seed) => {
                let key = crate::embed::fnv1a(&t.0.to_le_bytes()) ^ seed;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(key);
                rng.gen_range(0.0..1.0)
            }
        };
        raw.clamp(1e-12, 1.0 - 1e-12)
    }
}

/// Draws Uniform(0,1) noise per edge in ascending triple-id order.
pub fn draw_noise(
    rng: &mut impl Rng,
    edges: impl IntoIterator<Item = TripleId>,
) -> BTreeMap<TripleId, f64> {
    let ids: BTreeSet<TripleId> = edges.into_iter().collect();
    ids.into_iter().map(|t| (t, rng.gen_range(0.0..1.0))).collect()
}

/// One sampled mask value.
#[derive(Debug, Clone, Copy)]
pub struct MaskSample {
    pub node: NodeId,
    pub value: f64,
    pub eps: f64,
}

/// Samples the binary-concrete mask for every scored edge:
/// `M = sigmoid((logit(eps) + logit(P)) / tau)` with P clamped away from the
/// boundary first.
pub fn sample_mask(
    tape: &mut Tape,
    state: &RetrievalState,
    tau: f64,
    plan: &NoisePlan,
) -> Result<BTreeMap<TripleId, MaskSample>> {
    if !(tau > 0.0) {
        return Err(CoreError::domain(format!("mask temperature must be positive, got {tau}")));
    }
    let mut out = BTreeMap::new();
    for (tid, p_node) in &state.edge_probs {
        let eps = plan.eps(*tid);
        let noise_logit = (eps / (1.0 - eps)).ln();
        let p = tape.clamp(*p_node, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        let log_p = tape.log(p)?;
        let one_minus = tape.affine(p, -1.0, 1.0);
        let log_one_minus = tape.log(one_minus)?;
        let neg = tape.affine(log_one_minus, -1.0, 0.0);
        let logit = tape.add(log_p, neg)?;
        let shifted = tape.affine(logit, 1.0 / tau, noise_logit / tau);
        let mask = tape.sigmoid(shifted);
        out.insert(*tid, MaskSample { node: mask, value: tape.scalar_value(mask), eps });
    }
    Ok(out)
}

// ── Subgraph selection ──────────────────────────────────────────────────────

/// Final retrieved subgraph, ordered by descending importance.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub triples: Vec<TripleId>,
    pub importance: Vec<f64>,
    pub mask_values: Vec<f64>,
    pub mask_nodes: Vec<NodeId>,
    pub prob_nodes: Vec<NodeId>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Entities touched by the selected triples, ascending.
    pub fn entities(&self, g: &KnowledgeGraph) -> Result<BTreeSet<EntityId>> {
        let mut out = BTreeSet::new();
        for t in &self.triples {
            let triple = g.triple(*t)?;
            out.insert(triple.head);
            out.insert(triple.tail);
        }
        Ok(out)
    }
}

/// Takes the `budget` highest-probability edges (ties broken by ascending
/// triple id) together with their mask values.
pub fn select_subgraph(
    tape: &Tape,
    state: &RetrievalState,
    masks: &BTreeMap<TripleId, MaskSample>,
    budget: usize,
) -> Result<Subgraph> {
    if budget < 1 {
        return Err(CoreError::config("subgraph budget must be at least 1"));
    }
    let mut items: Vec<(TripleId, f64, NodeId)> = state
        .edge_probs
        .iter()
        .map(|(t, n)| (*t, tape.scalar_value(*n), *n))
        .filter(|(_, p, _)| *p > 0.0)
        .collect();
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    items.truncate(budget);

    let mut sub = Subgraph {
        triples: Vec::with_capacity(items.len()),
        importance: Vec::with_capacity(items.len()),
        mask_values: Vec::with_capacity(items.len()),
        mask_nodes: Vec::with_capacity(items.len()),
        prob_nodes: Vec::with_capacity(items.len()),
    };
    for (tid, p, p_node) in items {
        let mask = masks
            .get(&tid)
            .ok_or_else(|| CoreError::domain(format!("no mask sampled for triple {}", tid.0)))?;
        sub.triples.push(tid);
        sub.importance.push(p);
        sub.mask_values.push(mask.value);
        sub.mask_nodes.push(mask.node);
        sub.prob_nodes.push(p_node);
    }
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingProvider;
    use crate::kg::KnowledgeGraph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_params(dim: usize) -> RetrieverParams {
        let mut set = ParamSet::new();
        set.insert(SCORE_W, Tensor::matrix(1, 4 * dim, vec![0.0; 4 * dim]).unwrap()).unwrap();
        set.insert(SCORE_B, Tensor::vector(vec![0.0]).unwrap()).unwrap();
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        set.insert(UPDATE_SELF, Tensor::matrix(dim, dim, eye).unwrap()).unwrap();
        set.insert(UPDATE_NEIGHBOR, Tensor::matrix(dim, dim, vec![0.0; dim * dim]).unwrap()).unwrap();
        RetrieverParams { set, dim }
    }

    fn setup<'a>(
        tape: &mut Tape,
        g: &'a KnowledgeGraph,
        table: &'a EmbeddingTable,
        params: &RetrieverParams,
        hyper: RetrieverHyper,
        question: &str,
    ) -> RetrieverCtx<'a> {
        let provider = EmbeddingProvider::hash_seeded(params.dim, 99).unwrap();
        let q = tape.leaf(Tensor::vector(provider.question_vector(question).unwrap()).unwrap());
        let nodes = RetrieverNodes::bind(tape, params, false).unwrap();
        RetrieverCtx { g, table, question: q, nodes, hyper }
    }

    fn hash_table(g: &KnowledgeGraph, dim: usize) -> EmbeddingTable {
        EmbeddingProvider::hash_seeded(dim, 7).unwrap().materialize(g).unwrap()
    }

    #[test]
    fn chain_is_fully_visited_in_two_layers() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("b", "r", "c")]);
        let dim = 6;
        let table = hash_table(&g, dim);
        let params = zero_params(dim);
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let seeds = [g.entity_id("a").unwrap()];
        let mut state = RetrievalState::new(&mut tape, &g, &table, &seeds).unwrap();
        run_retrieval(&mut tape, &mut state, &rcx, 2).unwrap();
        for name in ["a", "b", "c"] {
            assert!(state.frontier.contains(&g.entity_id(name).unwrap()), "missing {name}");
        }
        assert_eq!(state.layer_index, 2);
    }

    #[test]
    fn single_neighbor_gets_alpha_one() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b")]);
        let dim = 4;
        let table = hash_table(&g, dim);
        let params = zero_params(dim);
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let seeds = [g.entity_id("a").unwrap()];
        let mut state = RetrievalState::new(&mut tape, &g, &table, &seeds).unwrap();
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        assert_eq!(out.scores.pairs.len(), 1);
        assert_eq!(tape.scalar_value(out.scores.pairs[0].alpha), 1.0);
    }

    #[test]
    fn identical_features_split_attention_evenly() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("a", "r", "c")]);
        let dim = 3;
        // Identical target embeddings make the two concatenated features equal.
        let table = EmbeddingTable {
            dim,
            entities: vec![vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5], vec![1.0, -1.0, 0.5]],
            relations: vec![vec![0.4, 0.4, 0.4]],
        };
        let mut params = zero_params(dim);
        params.set.get_mut(SCORE_W).unwrap().tensor.values =
            (0..4 * dim).map(|i| (i as f64) * 0.05 - 0.2).collect();
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let seeds = [g.entity_id("a").unwrap()];
        let mut state = RetrievalState::new(&mut tape, &g, &table, &seeds).unwrap();
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        for pair in &out.scores.pairs {
            assert!((tape.scalar_value(pair.alpha) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn star_attention_matches_closed_form_softmax_oracle() {
        let names = ["hub", "l0", "l1", "l2", "l3"];
        let rows: Vec<(String, String, String)> = (0..4)
            .map(|i| ("hub".to_string(), "r".to_string(), names[i + 1].to_string()))
            .collect();
        let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        let dim = 5;
        let table = hash_table(&g, dim);
        let mut params = zero_params(dim);
        params.set.get_mut(SCORE_W).unwrap().tensor.values = vec![1.0; 4 * dim];

        let provider = EmbeddingProvider::hash_seeded(dim, 99).unwrap();
        let qv = provider.question_vector("q").unwrap();
        let hub = g.entity_id("hub").unwrap();

        // Independent oracle: score_i = sum(feature_i), alpha = exp/sum(exp).
        let mut scores = Vec::new();
        for i in 0..4 {
            let leaf = g.entity_id(names[i + 1]).unwrap();
            let rel = g.relation_id("r").unwrap();
            let mut s = 0.0;
            s += table.entity(hub).unwrap().iter().sum::<f64>();
            s += table.entity(leaf).unwrap().iter().sum::<f64>();
            s += table.relation(rel).unwrap().iter().sum::<f64>();
            s += qv.iter().sum::<f64>();
            scores.push(s);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[hub]).unwrap();
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        assert_eq!(out.scores.pairs.len(), 4);
        for (i, pair) in out.scores.pairs.iter().enumerate() {
            let got = tape.scalar_value(pair.alpha);
            assert!((got - expected[i]).abs() < 1e-9, "leaf {i}: got {got}, expected {}", expected[i]);
        }
    }

    #[test]
    fn hot_star_triggers_pruning_and_drops_low_alpha_leaves() {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(("hub".to_string(), "r".to_string(), format!("leaf{i}")));
        }
        let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        let dim = 3;
        // Entity table: hub and all leaves zero except leaf0, which aligns
        // with the scorer's target slot.
        let mut entities = vec![vec![0.0; dim]; g.entity_count()];
        entities[g.entity_id("leaf0").unwrap().index()] = vec![10.0, 0.0, 0.0];
        let table = EmbeddingTable { dim, entities, relations: vec![vec![0.0; dim]] };
        let mut params = zero_params(dim);
        {
            let w = &mut params.set.get_mut(SCORE_W).unwrap().tensor.values;
            w[dim] = 1.0; // first coordinate of the target slot
        }
        let hyper = RetrieverHyper { sigma: 0.1, prune_trigger_budget: 16, ..RetrieverHyper::default() };
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, hyper, "q");
        let hub = g.entity_id("hub").unwrap();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[hub]).unwrap();
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();

        assert_eq!(out.survivors.len(), 1, "only the hot leaf should survive");
        assert_eq!(state.pruned.len(), 19);
        assert!(state.frontier.contains(&g.entity_id("leaf0").unwrap()));
        assert!(!state.frontier.contains(&g.entity_id("leaf1").unwrap()));
        assert_eq!(state.layer_traces[0].low_alpha_triples, 19);
    }

    #[test]
    fn pruning_does_not_trigger_below_budget() {
        let mut rows = Vec::new();
        for i in 0..8 {
            rows.push(("hub".to_string(), "r".to_string(), format!("leaf{i}")));
        }
        let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        let dim = 3;
        let table = hash_table(&g, dim);
        let params = zero_params(dim);
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let hub = g.entity_id("hub").unwrap();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[hub]).unwrap();
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        // alpha = 1/8 > sigma, so nothing is low and nothing is pruned.
        assert_eq!(out.survivors.len(), 8);
        assert!(state.pruned.is_empty());
        assert_eq!(state.frontier.len(), 9);
    }

    #[test]
    fn entity_update_matches_dense_matrix_oracle_on_triangle() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a")]);
        let dim = 4;
        let table = hash_table(&g, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = zero_params(dim);
        let w1: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        params.set.get_mut(UPDATE_SELF).unwrap().tensor.values = w1.clone();
        params.set.get_mut(UPDATE_NEIGHBOR).unwrap().tensor.values = w2.clone();

        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let seeds: Vec<EntityId> = ["a", "b", "c"].iter().map(|n| g.entity_id(n).unwrap()).collect();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &seeds).unwrap();
        grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();

        // With zero score weights every source splits attention 0.5/0.5, so
        // h'_i = W1 h_i + W2 (0.5 h_j + 0.5 h_k) for the two neighbors.
        let ids: Vec<EntityId> = seeds.clone();
        let h: Vec<&[f64]> = ids.iter().map(|e| table.entity(*e).unwrap()).collect();
        let matvec = |m: &[f64], v: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|r| (0..dim).map(|c| m[r * dim + c] * v[c]).sum())
                .collect()
        };
        for (i, e) in ids.iter().enumerate() {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            let mixed: Vec<f64> = (0..dim).map(|d| 0.5 * h[j][d] + 0.5 * h[k][d]).collect();
            let expected: Vec<f64> = matvec(&w1, h[i])
                .iter()
                .zip(matvec(&w2, &mixed))
                .map(|(a, b)| a + b)
                .collect();
            let got = tape.values(state.ctx[e]);
            for d in 0..dim {
                assert!(
                    (got[d] - expected[d]).abs() < 1e-9,
                    "entity {i} coord {d}: got {}, expected {}",
                    got[d],
                    expected[d]
                );
            }
            assert_eq!(got.len(), dim, "update must preserve dimension");
        }
    }

    #[test]
    fn identity_self_and_zero_neighbor_weights_leave_embeddings_unchanged() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("a", "r", "c")]);
        let dim = 4;
        let table = hash_table(&g, dim);
        let params = zero_params(dim); // W1 = I, W2 = 0
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let a = g.entity_id("a").unwrap();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[a]).unwrap();
        grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        for name in ["a", "b", "c"] {
            let e = g.entity_id(name).unwrap();
            assert_eq!(tape.values(state.ctx[&e]), table.entity(e).unwrap());
        }
    }

    #[test]
    fn source_without_messages_gets_self_term_only() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b")]);
        let dim = 3;
        let table = hash_table(&g, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = zero_params(dim);
        let w1: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        params.set.get_mut(UPDATE_SELF).unwrap().tensor.values = w1.clone();
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let a = g.entity_id("a").unwrap();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[a]).unwrap();
        grow_prune_step(&mut tape, &mut state, &rcx).unwrap().unwrap();
        let ha = table.entity(a).unwrap();
        let expected: Vec<f64> = (0..dim)
            .map(|r| (0..dim).map(|c| w1[r * dim + c] * ha[c]).sum())
            .collect();
        let got = tape.values(state.ctx[&a]);
        for d in 0..dim {
            assert!((got[d] - expected[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn per_source_attention_sums_to_one_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for round in 0..15 {
            let n = rng.gen_range(3..10usize);
            let m = rng.gen_range(2..20usize);
            let rows: Vec<(String, String, String)> = (0..m)
                .map(|k| {
                    (
                        format!("e{}", rng.gen_range(0..n)),
                        format!("r{}", k % 3),
                        format!("e{}", rng.gen_range(0..n)),
                    )
                })
                .collect();
            let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
            let dim = 4;
            let table = hash_table(&g, dim);
            let mut params = zero_params(dim);
            params.set.get_mut(SCORE_W).unwrap().tensor.values =
                (0..4 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
            let seed = EntityId(rng.gen_range(0..g.entity_count()) as u32);
            let mut state = RetrievalState::new(&mut tape, &g, &table, &[seed]).unwrap();
            let Some(out) = grow_prune_step(&mut tape, &mut state, &rcx).unwrap() else {
                continue;
            };
            let mut by_source: BTreeMap<EntityId, f64> = BTreeMap::new();
            for pair in &out.scores.pairs {
                *by_source.entry(pair.source).or_insert(0.0) += tape.scalar_value(pair.alpha);
            }
            for (src, total) in by_source {
                assert!(
                    (total - 1.0).abs() < 1e-6,
                    "round {round}: source {src:?} attention sums to {total}"
                );
            }
        }
    }

    #[test]
    fn raising_sigma_shrinks_the_survivor_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let leaves = rng.gen_range(18..30usize);
            let rows: Vec<(String, String, String)> = (0..leaves)
                .map(|i| ("hub".to_string(), format!("r{}", i % 5), format!("leaf{i}")))
                .collect();
            let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
            let dim = 4;
            let table = hash_table(&g, dim);
            let mut params = zero_params(dim);
            params.set.get_mut(SCORE_W).unwrap().tensor.values =
                (0..4 * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let hub = g.entity_id("hub").unwrap();

            let run = |sigma: f64| -> BTreeSet<TripleId> {
                let hyper = RetrieverHyper { sigma, prune_trigger_budget: 4, ..RetrieverHyper::default() };
                let mut tape = Tape::new();
                let rcx = setup(&mut tape, &g, &table, &params, hyper, "q");
                let mut state = RetrievalState::new(&mut tape, &g, &table, &[hub]).unwrap();
                match grow_prune_step(&mut tape, &mut state, &rcx).unwrap() {
                    Some(out) => out.survivors.into_iter().collect(),
                    None => BTreeSet::new(),
                }
            };
            let low = run(0.05);
            let high = run(0.2);
            assert!(high.is_subset(&low), "sigma=0.2 survivors not a subset of sigma=0.05 survivors");
        }
    }

    #[test]
    fn visited_entities_stay_within_layer_count_hops_of_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..10 {
            let n = rng.gen_range(5..14usize);
            let m = rng.gen_range(4..30usize);
            let rows: Vec<(String, String, String)> = (0..m)
                .map(|k| {
                    (
                        format!("e{}", rng.gen_range(0..n)),
                        format!("r{}", k % 4),
                        format!("e{}", rng.gen_range(0..n)),
                    )
                })
                .collect();
            let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
            let dim = 4;
            let table = hash_table(&g, dim);
            let params = zero_params(dim);
            let layers = rng.gen_range(1..4usize);
            let mut tape = Tape::new();
            let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
            let seed = EntityId(rng.gen_range(0..g.entity_count()) as u32);
            let mut state = RetrievalState::new(&mut tape, &g, &table, &[seed]).unwrap();
            run_retrieval(&mut tape, &mut state, &rcx, layers).unwrap();
            let dist = g.bfs_distances(&[seed]).unwrap();
            for e in state.ctx.keys() {
                let d = dist[e.index()].expect("visited entity must be reachable");
                assert!(
                    (d as usize) <= layers,
                    "entity {e:?} at distance {d} visited with only {layers} layers"
                );
            }
        }
    }

    #[test]
    fn edge_probabilities_never_decrease_across_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let rows: Vec<(String, String, String)> = (0..25)
            .map(|k| {
                (
                    format!("e{}", rng.gen_range(0..8)),
                    format!("r{}", k % 3),
                    format!("e{}", rng.gen_range(0..8)),
                )
            })
            .collect();
        let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        let dim = 4;
        let table = hash_table(&g, dim);
        let mut params = zero_params(dim);
        params.set.get_mut(SCORE_W).unwrap().tensor.values =
            (0..4 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[EntityId(0)]).unwrap();
        let mut last: BTreeMap<TripleId, f64> = BTreeMap::new();
        for _ in 0..3 {
            if grow_prune_step(&mut tape, &mut state, &rcx).unwrap().is_none() {
                break;
            }
            for (t, n) in &state.edge_probs {
                let p = tape.scalar_value(*n);
                assert!((0.0..=1.0).contains(&p));
                if let Some(prev) = last.get(t) {
                    assert!(p >= *prev - 1e-15, "P decreased for {t:?}: {prev} -> {p}");
                }
                last.insert(*t, p);
            }
        }
    }

    #[test]
    fn exhausted_seed_sets_flag_without_layering() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("lone", "r2", "lone")]);
        let dim = 3;
        let table = hash_table(&g, dim);
        let params = zero_params(dim);
        let mut tape = Tape::new();
        let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
        // Seed on `lone` and pre-prune its only incident edge (the self-loop),
        // leaving nothing eligible.
        let lone = g.entity_id("lone").unwrap();
        let mut state = RetrievalState::new(&mut tape, &g, &table, &[lone]).unwrap();
        state.pruned.insert(TripleId(1));
        let out = grow_prune_step(&mut tape, &mut state, &rcx).unwrap();
        assert!(out.is_none());
        assert!(state.exhausted);
        assert_eq!(state.layer_index, 0);
        assert_eq!(state.frontier.len(), 1);
    }

    #[test]
    fn mask_equals_probability_at_neutral_noise() {
        let mut tape = Tape::new();
        let mut state = empty_state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200u32 {
            let p = rng.gen_range(1e-5..1.0 - 1e-5);
            let node = tape.constant(p).unwrap();
            state.edge_probs.insert(TripleId(i), node);
        }
        let masks = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.5)).unwrap();
        for (t, m) in &masks {
            let p = tape.scalar_value(state.edge_probs[t]);
            assert!((m.value - p).abs() < 1e-9, "mask {} vs p {}", m.value, p);
        }
    }

    #[test]
    fn mask_is_monotone_in_probability_for_fixed_noise() {
        let mut tape = Tape::new();
        let mut state = empty_state();
        let probs = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
        for (i, p) in probs.iter().enumerate() {
            let node = tape.constant(*p).unwrap();
            state.edge_probs.insert(TripleId(i as u32), node);
        }
        let masks = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.3)).unwrap();
        let vals: Vec<f64> = masks.values().map(|m| m.value).collect();
        for w in vals.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn small_temperature_sharpens_the_mask() {
        let mut tape = Tape::new();
        let mut state = empty_state();
        let node = tape.constant(0.8).unwrap();
        state.edge_probs.insert(TripleId(0), node);
        let warm = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.5)).unwrap();
        let sharp = sample_mask(&mut tape, &state, 0.05, &NoisePlan::Fixed(0.5)).unwrap();
        assert!(sharp[&TripleId(0)].value > warm[&TripleId(0)].value);
        assert!(sharp[&TripleId(0)].value > 0.999999);
        // Mask stays strictly inside (0, 1).
        assert!(sharp[&TripleId(0)].value < 1.0);
    }

    #[test]
    fn non_positive_temperature_is_a_domain_error() {
        let mut tape = Tape::new();
        let state = empty_state();
        assert!(sample_mask(&mut tape, &state, 0.0, &NoisePlan::Fixed(0.5)).is_err());
        assert!(sample_mask(&mut tape, &state, -1.0, &NoisePlan::Fixed(0.5)).is_err());
    }

    fn empty_state() -> RetrievalState {
        RetrievalState {
            frontier: BTreeSet::new(),
            ctx: BTreeMap::new(),
            edge_scores: BTreeMap::new(),
            edge_probs: BTreeMap::new(),
            pruned: BTreeSet::new(),
            layer_index: 0,
            exhausted: false,
            layer_traces: Vec::new(),
        }
    }

    #[test]
    fn subgraph_selection_takes_top_probabilities() {
        let mut tape = Tape::new();
        let mut state = empty_state();
        for (i, p) in [0.9, 0.8, 0.3].iter().enumerate() {
            let node = tape.constant(*p).unwrap();
            state.edge_probs.insert(TripleId(i as u32), node);
        }
        let masks = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.5)).unwrap();
        let sub = select_subgraph(&tape, &state, &masks, 2).unwrap();
        assert_eq!(sub.triples, vec![TripleId(0), TripleId(1)]);
        assert_eq!(sub.importance, vec![0.9, 0.8]);

        let all = select_subgraph(&tape, &state, &masks, 10).unwrap();
        assert_eq!(all.len(), 3);
        let one = select_subgraph(&tape, &state, &masks, 1).unwrap();
        assert_eq!(one.triples, vec![TripleId(0)]);
        assert!(select_subgraph(&tape, &state, &masks, 0).is_err());
    }

    #[test]
    fn subgraph_selection_matches_sort_oracle_on_random_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new();
        let mut state = empty_state();
        let mut raw: Vec<(u32, f64)> = Vec::new();
        for i in 0..50u32 {
            let p = rng.gen_range(0.01..0.99);
            let node = tape.constant(p).unwrap();
            state.edge_probs.insert(TripleId(i), node);
            raw.push((i, p));
        }
        let masks = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.5)).unwrap();
        let sub = select_subgraph(&tape, &state, &masks, 10).unwrap();
        raw.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<TripleId> = raw.iter().take(10).map(|(i, _)| TripleId(*i)).collect();
        assert_eq!(sub.triples, expected);
        // Descending importance with deterministic ties.
        for w in sub.importance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn ties_break_by_ascending_triple_id() {
        let mut tape = Tape::new();
        let mut state = empty_state();
        for i in [5u32, 1, 9] {
            let node = tape.constant(0.7).unwrap();
            state.edge_probs.insert(TripleId(i), node);
        }
        let masks = sample_mask(&mut tape, &state, 1.0, &NoisePlan::Fixed(0.5)).unwrap();
        let sub = select_subgraph(&tape, &state, &masks, 2).unwrap();
        assert_eq!(sub.triples, vec![TripleId(1), TripleId(5)]);
    }

    #[test]
    fn mask_gradient_reaches_score_weights() {
        use crate::numerics::grad_check;
        // Every source keeps at least two eligible edges per layer, so no
        // attention value saturates at exactly 1 and the probabilities stay
        // strictly inside the clamp range.
        let (g, _) = KnowledgeGraph::from_names([
            ("a", "r", "b"),
            ("a", "s", "c"),
            ("b", "r", "d"),
            ("b", "s", "e"),
            ("c", "r", "f"),
            ("c", "s", "g2"),
        ]);
        let dim = 3;
        let table = hash_table(&g, dim);
        let provider = EmbeddingProvider::hash_seeded(dim, 99).unwrap();
        let qv = provider.question_vector("which way").unwrap();
        let a = g.entity_id("a").unwrap();

        let score_w = Tensor::matrix(1, 4 * dim, (0..4 * dim).map(|i| 0.1 * (i as f64) - 0.5).collect()).unwrap();
        let mut builder = |tape: &mut Tape, ids: &[NodeId]| {
            let score_b = tape.constant(0.0)?;
            let mut eye = vec![0.0; dim * dim];
            for i in 0..dim {
                eye[i * dim + i] = 1.0;
            }
            let update_self = tape.leaf(Tensor::matrix(dim, dim, eye)?);
            let update_neighbor = tape.leaf(Tensor::matrix(dim, dim, vec![0.05; dim * dim])?);
            let question = tape.leaf(Tensor::vector(qv.clone())?);
            let rcx = RetrieverCtx {
                g: &g,
                table: &table,
                question,
                nodes: RetrieverNodes { score_w: ids[0], score_b, update_self, update_neighbor },
                hyper: RetrieverHyper::default(),
            };
            let mut state = RetrievalState::new(tape, &g, &table, &[a])?;
            run_retrieval(tape, &mut state, &rcx, 2)?;
            let masks = sample_mask(tape, &state, 1.0, &NoisePlan::Fixed(0.3))?;
            let nodes: Vec<NodeId> = masks.values().map(|m| m.node).collect();
            let stacked = tape.concat(&nodes)?;
            tape.sum(stacked)
        };
        let err = grad_check(&mut builder, &[score_w.clone()], 1e-4).unwrap();
        assert!(err < 1e-6, "gradient mismatch: {err}");

        // The gradient itself must be nonzero somewhere.
        let mut tape = Tape::new();
        let id = tape.leaf(score_w.with_grad());
        let out = builder(&mut tape, &[id]).unwrap();
        let grads = tape.backward(out).unwrap();
        let g_w = grads.of(id).unwrap();
        assert!(g_w.iter().any(|v| v.abs() > 1e-12), "mask gradient vanished entirely");
    }

    #[test]
    fn retrieval_is_bit_identical_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<(String, String, String)> = (0..30)
            .map(|k| {
                (
                    format!("e{}", rng.gen_range(0..10)),
                    format!("r{}", k % 4),
                    format!("e{}", rng.gen_range(0..10)),
                )
            })
            .collect();
        let (g, _) = KnowledgeGraph::from_names(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        let dim = 4;
        let table = hash_table(&g, dim);
        let mut params = zero_params(dim);
        params.set.get_mut(SCORE_W).unwrap().tensor.values =
            (0..4 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = || {
            let mut tape = Tape::new();
            let rcx = setup(&mut tape, &g, &table, &params, RetrieverHyper::default(), "q");
            let mut state = RetrievalState::new(&mut tape, &g, &table, &[EntityId(0)]).unwrap();
            run_retrieval(&mut tape, &mut state, &rcx, 3).unwrap();
            let trace = state.trace(&tape);
            serde_json::to_string(&trace).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hyper_validation_rejects_bad_values() {
        let mut h = RetrieverHyper::default();
        assert!(h.validate().is_ok());
        h.sigma = 0.0;
        assert!(h.validate().is_err());
        h = RetrieverHyper { temperature: 0.0, ..RetrieverHyper::default() };
        assert!(h.validate().is_err());
        h = RetrieverHyper { num_layers: 0, ..RetrieverHyper::default() };
        assert!(h.validate().is_err());
        h = RetrieverHyper { prune_mode: PruneMode::TopK { k: 0 }, ..RetrieverHyper::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn default_hyper_matches_reference_configuration() {
        let h = RetrieverHyper::default();
        assert_eq!(h.sigma, 0.1);
        assert_eq!(h.prune_trigger_budget, 16);
        assert_eq!(h.temperature, 1.0);
        assert!(matches!(h.prune_mode, PruneMode::Threshold));
        assert!(h.entity_update);
    }
}
