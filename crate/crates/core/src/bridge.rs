//! Bridges the retrieved subgraph to the reasoner.
//!
//! Two channels leave the retriever. The structural channel pools the
//! contextualised entity embeddings of the selected subgraph into a single
//! soft graph token with self-attention pooling, keeping the edge masks in
//! the computation so reasoner gradients travel back into edge
//! probabilities. The semantic channel renders the subgraph into a fixed
//! text template listing the triples as reasoning paths. The assembled
//! reasoner input is the graph token followed by the embedded prompt tokens.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingProvider;
use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::numerics::{NodeId, ParamSet, Tape};
use crate::retriever::Subgraph;

/// Marker that stands in for the soft token slot in the rendered prompt.
pub const GRAPH_TOKEN_MARKER: &str = "[Graph Token] ";

// ── Parameters ──────────────────────────────────────────────────────────────

pub const POOL_SCORE_W: &str = "pool_score_w";
pub const POOL_SCORE_B: &str = "pool_score_b";
pub const POOL_MLP_W1: &str = "pool_mlp_w1";
pub const POOL_MLP_B1: &str = "pool_mlp_b1";
pub const POOL_MLP_W2: &str = "pool_mlp_w2";
pub const POOL_MLP_B2: &str = "pool_mlp_b2";

/// Pooling parameters: a linear self-attention scorer over entity embeddings
/// and a two-layer perceptron projecting the pooled vector into the
/// reasoner's embedding space.
#[derive(Debug, Clone)]
pub struct BridgeParams {
    pub set: ParamSet,
    pub dim: usize,
    pub reasoner_dim: usize,
}

impl BridgeParams {
    pub fn init(dim: usize, reasoner_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        use crate::numerics::{init_matrix, init_vector};
        let mut set = ParamSet::new();
        let s_in = 1.0 / (dim as f64).sqrt();
        set.insert(POOL_SCORE_W, init_matrix(rng, 1, dim, s_in))?;
        set.insert(POOL_SCORE_B, init_vector(rng, 1, 0.0))?;
        set.insert(POOL_MLP_W1, init_matrix(rng, dim, dim, s_in))?;
        set.insert(POOL_MLP_B1, init_vector(rng, dim, 0.0))?;
        set.insert(POOL_MLP_W2, init_matrix(rng, reasoner_dim, dim, s_in))?;
        set.insert(POOL_MLP_B2, init_vector(rng, reasoner_dim, 0.0))?;
        Ok(BridgeParams { set, dim, reasoner_dim })
    }
}

/// Tape bindings for the bridge parameters.
#[derive(Debug, Clone, Copy)]
pub struct BridgeNodes {
    pub score_w: NodeId,
    pub score_b: NodeId,
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
    pub mlp_w2: NodeId,
    pub mlp_b2: NodeId,
}

impl BridgeNodes {
    pub fn bind(tape: &mut Tape, params: &BridgeParams, trainable: bool) -> Result<Self> {
        Ok(BridgeNodes {
            score_w: params.set.bind(tape, POOL_SCORE_W, trainable)?,
            score_b: params.set.bind(tape, POOL_SCORE_B, trainable)?,
            mlp_w1: params.set.bind(tape, POOL_MLP_W1, trainable)?,
            mlp_b1: params.set.bind(tape, POOL_MLP_B1, trainable)?,
            mlp_w2: params.set.bind(tape, POOL_MLP_W2, trainable)?,
            mlp_b2: params.set.bind(tape, POOL_MLP_B2, trainable)?,
        })
    }

    /// Name-to-node pairs for gradient extraction.
    pub fn bindings(&self) -> [(&'static str, NodeId); 6] {
        [
            (POOL_SCORE_W, self.score_w),
            (POOL_SCORE_B, self.score_b),
            (POOL_MLP_W1, self.mlp_w1),
            (POOL_MLP_B1, self.mlp_b1),
            (POOL_MLP_W2, self.mlp_w2),
            (POOL_MLP_B2, self.mlp_b2),
        ]
    }
}

// ── Graph token ─────────────────────────────────────────────────────────────

/// Soft graph token: a pooled, projected summary of the selected subgraph.
#[derive(Debug, Clone)]
pub struct GraphToken {
    pub node: NodeId,
    /// Identifies the subgraph this token was pooled from.
    pub provenance: String,
}

/// Pools the subgraph into one vector.
///
/// Each subgraph entity gets a self-attention weight (linear scorer +
/// softmax over the subgraph entities) and a soft inclusion weight, the max
/// of the mask values of its selected incident edges. The weighted sum of
/// contextualised embeddings is projected through a two-layer tanh
/// perceptron into the reasoner dimension.
pub fn sag_pool(
    tape: &mut Tape,
    g: &KnowledgeGraph,
    subgraph: &Subgraph,
    ctx: &BTreeMap<EntityId, NodeId>,
    nodes: &BridgeNodes,
    provenance: &str,
) -> Result<GraphToken> {
    if subgraph.is_empty() {
        return Err(CoreError::domain("cannot pool an empty subgraph"));
    }
    let mut inclusion: BTreeMap<EntityId, NodeId> = BTreeMap::new();
    for (i, tid) in subgraph.triples.iter().enumerate() {
        let triple = *g.triple(*tid)?;
        let mask = subgraph.mask_nodes[i];
        for e in [triple.head, triple.tail] {
            match inclusion.get(&e) {
                Some(existing) => {
                    let merged = tape.max_pair(*existing, mask)?;
                    inclusion.insert(e, merged);
                }
                None => {
                    inclusion.insert(e, mask);
                }
            }
        }
    }

    let entities: Vec<EntityId> = inclusion.keys().copied().collect();
    let mut raw_scores = Vec::with_capacity(entities.len());
    for e in &entities {
        let h = *ctx
            .get(e)
            .ok_or_else(|| CoreError::domain(format!("subgraph entity {} has no contextualized embedding", e.index())))?;
        let s = tape.linear(nodes.score_w, h, nodes.score_b)?;
        raw_scores.push(s);
    }
    let stacked = tape.concat(&raw_scores)?;
    let attn = tape.softmax(stacked)?;

    let mut contributions = Vec::with_capacity(entities.len());
    for (i, e) in entities.iter().enumerate() {
        let a = tape.index(attn, i)?;
        let w = inclusion[e];
        let coeff = tape.mul(a, w)?;
        let h = ctx[e];
        contributions.push(tape.scale_by(h, coeff)?);
    }
    let pooled = tape.add_n(&contributions)?;

    let pre = tape.linear(nodes.mlp_w1, pooled, nodes.mlp_b1)?;
    let hidden = tape.tanh(pre);
    let token = tape.linear(nodes.mlp_w2, hidden, nodes.mlp_b2)?;
    Ok(GraphToken { node: token, provenance: provenance.to_string() })
}

// ── Verbalization ───────────────────────────────────────────────────────────

/// Rendered text prompt for the semantic channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizedPrompt {
    pub text: String,
    pub triple_count: usize,
}

impl VerbalizedPrompt {
    /// Prompt text with the graph-token marker stripped.
    pub fn content_text(&self) -> &str {
        self.text.strip_prefix(GRAPH_TOKEN_MARKER).unwrap_or(&self.text)
    }

    /// Whitespace tokens of the content text.
    pub fn content_tokens(&self) -> Vec<&str> {
        self.content_text().split_whitespace().collect()
    }
}

/// Renders the subgraph into the fixed prompt template, triples in the
/// subgraph's order (descending importance).
pub fn verbalize(
    subgraph: &Subgraph,
    g: &KnowledgeGraph,
    question: &str,
    answer: Option<&str>,
) -> Result<VerbalizedPrompt> {
    let mut paths = Vec::with_capacity(subgraph.triples.len());
    for tid in &subgraph.triples {
        let t = g.triple(*tid)?;
        paths.push(format!(
            "<{} → {} → {}>",
            g.entity_name(t.head)?,
            g.relation_name(t.relation)?,
            g.entity_name(t.tail)?
        ));
    }
    let text = format!(
        "[Graph Token] Based on the following reasoning paths, please answer the given question. \n Reasoning Paths: {} \n Question: {} \n Answer: {}",
        paths.join("; "),
        question,
        answer.unwrap_or("")
    );
    Ok(VerbalizedPrompt { text, triple_count: subgraph.triples.len() })
}

// ── Assembly ────────────────────────────────────────────────────────────────

/// Embeds the prompt and prepends the graph token.
///
/// Position 0 is the token node; the rest are embeddings of the prompt's
/// content tokens. With `include_token` false (ablation) the sequence is the
/// plain prompt embedding.
pub fn assemble_reasoner_input(
    tape: &mut Tape,
    token: Option<&GraphToken>,
    prompt: &VerbalizedPrompt,
    embedder: &EmbeddingProvider,
) -> Result<Vec<NodeId>> {
    let mut seq = Vec::new();
    if let Some(t) = token {
        let token_len = tape.value(t.node).len();
        if token_len != embedder.dim() {
            return Err(CoreError::config(format!(
                "graph token dimension {} does not match embedder dimension {}",
                token_len,
                embedder.dim()
            )));
        }
        seq.push(t.node);
    }
    for tok in prompt.content_tokens() {
        let v = embedder.text_vector(tok)?;
        seq.push(tape.leaf(crate::numerics::Tensor::vector(v)?));
    }
    Ok(seq)
}
