//! Pluggable answer scorer and the reference toy implementation.
//!
//! The engine only depends on the [`Reasoner`] trait: given the assembled
//! input sequence (graph token plus embedded prompt) and a candidate answer
//! set, produce log-probabilities over the candidates. The toy reasoner
//! pools the sequence, concatenates the question embedding and scores each
//! candidate with a bilinear term plus a small perceptron. Its feedback is
//! differentiable through the graph token, which is what lets retrieval
//! training work against a frozen scorer.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::embed::EmbeddingProvider;
use crate::error::{CoreError, Result};
use crate::numerics::{NodeId, ParamSet, Tape, Tensor};

// ── Feedback ────────────────────────────────────────────────────────────────

/// Scored candidate answers.
#[derive(Debug, Clone)]
pub struct ReasonerFeedback {
    /// Raw logits node, one per candidate.
    pub logits: NodeId,
    /// Log-softmax node over the candidates.
    pub log_probs: NodeId,
    /// Log-probability values mirroring `log_probs`.
    pub values: Vec<f64>,
    pub candidates: Vec<String>,
    /// Candidate indices ordered by descending log-probability, ties broken
    /// by ascending index.
    pub ranking: Vec<usize>,
    /// Parameter name to tape node pairs for this forward's trainable
    /// bindings; empty when the call was frozen.
    pub param_bindings: Vec<(String, NodeId)>,
}

impl ReasonerFeedback {
    pub fn top1(&self) -> &str {
        &self.candidates[self.ranking[0]]
    }

    pub fn ranked_candidates(&self) -> Vec<&str> {
        self.ranking.iter().map(|i| self.candidates[*i].as_str()).collect()
    }

    /// Log-probability assigned to a candidate by name.
    pub fn gold_logprob(&self, gold: &str) -> Result<f64> {
        let idx = self.gold_index(gold)?;
        Ok(self.values[idx])
    }

    pub fn gold_index(&self, gold: &str) -> Result<usize> {
        self.candidates
            .iter()
            .position(|c| c == gold)
            .ok_or_else(|| CoreError::Unknown { kind: "candidate answer", id: gold.to_string() })
    }
}

/// Contract every answer scorer fulfils. Forward must be deterministic in
/// its parameters and inputs, and differentiable at the graph-token
/// position of the sequence.
pub trait Reasoner {
    /// Embedding dimension of the input sequence.
    fn dim(&self) -> usize;
    /// Scores candidates given the assembled input sequence. `trainable`
    /// controls whether this call's parameter bindings receive gradients.
    fn forward(
        &self,
        tape: &mut Tape,
        input_seq: &[NodeId],
        question: &str,
        candidates: &[String],
        trainable: bool,
    ) -> Result<ReasonerFeedback>;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Embeds prompt tokens; shared with the input assembly step.
    fn embedder(&self) -> &EmbeddingProvider;
}

/// Negative log-likelihood of the gold answer.
///
/// Errors when the gold answer is missing from the candidate set; training
/// callers must add it to the candidates themselves.
pub fn reasoner_loss(tape: &mut Tape, feedback: &ReasonerFeedback, gold: &str) -> Result<NodeId> {
    let idx = feedback.gold_index(gold)?;
    let lp = tape.index(feedback.log_probs, idx)?;
    Ok(tape.affine(lp, -1.0, 0.0))
}

// ── Toy reasoner ────────────────────────────────────────────────────────────

pub const BILINEAR: &str = "bilinear";
pub const HEAD_W1: &str = "head_w1";
pub const HEAD_B1: &str = "head_b1";
pub const HEAD_W2: &str = "head_w2";
pub const HEAD_B2: &str = "head_b2";

/// Hyperparameters for [`ToyReasoner`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyReasonerConfig {
    pub dim: usize,
    /// Seed for the token embedder.
    pub embed_seed: u64,
}

impl Default for ToyReasonerConfig {
    fn default() -> Self {
        ToyReasonerConfig { dim: 64, embed_seed: 17 }
    }
}

/// Tape bindings for the toy reasoner parameters.
#[derive(Debug, Clone, Copy)]
pub struct ToyNodes {
    pub bilinear: NodeId,
    pub head_w1: NodeId,
    pub head_b1: NodeId,
    pub head_w2: NodeId,
    pub head_b2: NodeId,
}

impl ToyNodes {
    pub fn bind(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Result<Self> {
        Ok(ToyNodes {
            bilinear: params.bind(tape, BILINEAR, trainable)?,
            head_w1: params.bind(tape, HEAD_W1, trainable)?,
            head_b1: params.bind(tape, HEAD_B1, trainable)?,
            head_w2: params.bind(tape, HEAD_W2, trainable)?,
            head_b2: params.bind(tape, HEAD_B2, trainable)?,
        })
    }
}

/// Reference differentiable scorer.
#[derive(Debug, Clone)]
pub struct ToyReasoner {
    pub config: ToyReasonerConfig,
    params: ParamSet,
    embedder: EmbeddingProvider,
}

impl ToyReasoner {
    pub fn new(config: ToyReasonerConfig, rng: &mut impl Rng) -> Result<Self> {
        use crate::numerics::{init_matrix, init_vector};
        if config.dim == 0 {
            return Err(CoreError::config("reasoner dimension must be positive"));
        }
        let d = config.dim;
        let mut params = ParamSet::new();
        let scale = 1.0 / (d as f64).sqrt();
        params.insert(BILINEAR, init_matrix(rng, 2 * d, d, scale))?;
        params.insert(HEAD_W1, init_matrix(rng, d, 3 * d, scale))?;
        params.insert(HEAD_B1, init_vector(rng, d, 0.0))?;
        params.insert(HEAD_W2, init_matrix(rng, 1, d, scale))?;
        params.insert(HEAD_B2, init_vector(rng, 1, 0.0))?;
        let embedder = EmbeddingProvider::hash_seeded(d, config.embed_seed)?;
        Ok(ToyReasoner { config, params, embedder })
    }

    /// Forward pass with explicit parameter bindings, so callers can control
    /// gradient routing per invocation.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        nodes: &ToyNodes,
        input_seq: &[NodeId],
        question: &str,
        candidates: &[String],
    ) -> Result<ReasonerFeedback> {
        if input_seq.is_empty() {
            return Err(CoreError::domain("reasoner input sequence is empty"));
        }
        if candidates.is_empty() {
            return Err(CoreError::domain("candidate answer set is empty"));
        }
        let d = self.config.dim;
        for (i, n) in input_seq.iter().enumerate() {
            let len = tape.value(*n).len();
            if len != d {
                return Err(CoreError::config(format!(
                    "input position {i} has dimension {len}, reasoner expects {d}"
                )));
            }
        }
        let inv = 1.0 / input_seq.len() as f64;
        let scaled: Vec<NodeId> = input_seq.iter().map(|n| tape.affine(*n, inv, 0.0)).collect();
        let pooled = tape.add_n(&scaled)?;
        let q = tape.leaf(Tensor::vector(self.embedder.question_vector(question)?)?);
        let u = tape.concat(&[pooled, q])?;

        let mut logits = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let e = tape.leaf(Tensor::vector(self.embedder.text_vector(cand)?)?);
            let projected = tape.matvec(nodes.bilinear, e)?;
            let bilinear = tape.dot(u, projected)?;
            let feat = tape.concat(&[u, e])?;
            let pre = tape.linear(nodes.head_w1, feat, nodes.head_b1)?;
            let hidden = tape.tanh(pre);
            let head = tape.linear(nodes.head_w2, hidden, nodes.head_b2)?;
            let head_scalar = tape.index(head, 0)?;
            logits.push(tape.add(bilinear, head_scalar)?);
        }
        let stacked = tape.concat(&logits)?;
        let log_probs = tape.log_softmax(stacked)?;
        let values = tape.values(log_probs).to_vec();
        let mut ranking: Vec<usize> = (0..candidates.len()).collect();
        ranking.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap().then(a.cmp(b)));
        Ok(ReasonerFeedback {
            logits: stacked,
            log_probs,
            values,
            candidates: candidates.to_vec(),
            ranking,
            param_bindings: Vec::new(),
        })
    }
}

impl Reasoner for ToyReasoner {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn forward(
        &self,
        tape: &mut Tape,
        input_seq: &[NodeId],
        question: &str,
        candidates: &[String],
        trainable: bool,
    ) -> Result<ReasonerFeedback> {
        let nodes = ToyNodes::bind(tape, &self.params, trainable)?;
        let mut fb = self.forward_with(tape, &nodes, input_seq, question, candidates)?;
        if trainable {
            fb.param_bindings = vec![
                (BILINEAR.to_string(), nodes.bilinear),
                (HEAD_W1.to_string(), nodes.head_w1),
                (HEAD_B1.to_string(), nodes.head_b1),
                (HEAD_W2.to_string(), nodes.head_w2),
                (HEAD_B2.to_string(), nodes.head_b2),
            ];
        }
        Ok(fb)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn embedder(&self) -> &EmbeddingProvider {
        &self.embedder
    }
}
