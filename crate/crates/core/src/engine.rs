//! End-to-end pipeline assembly.
//!
//! An [`Engine`] owns the knowledge graph, the embedding tables, and the
//! three parameter groups (retriever, bridge, reasoner). One forward pass
//! retrieves a subgraph for a question, samples the edge mask, pools the
//! graph token, renders the prompt, and scores candidate answers. Training
//! and evaluation both go through [`Engine::forward`], differing only in
//! which parameter groups are bound trainable and which noise plan is used.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{assemble_reasoner_input, sag_pool, verbalize, BridgeNodes, BridgeParams, GraphToken, VerbalizedPrompt};
use crate::embed::{EmbeddingProvider, EmbeddingTable};
use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph, TripleId};
use crate::numerics::{checkpoint, ParamSet, Shape, Tape, Tensor};
use crate::reasoner::{Reasoner, ReasonerFeedback, ToyReasoner, ToyReasonerConfig};
use crate::retriever::{
    run_retrieval, sample_mask, select_subgraph, MaskSample, NoisePlan, RetrievalState,
    RetrieverCtx, RetrieverHyper, RetrieverNodes, RetrieverParams, Subgraph,
};

/// Namespaces used in merged checkpoints.
const NS_RETRIEVER: &str = "retriever";
const NS_BRIDGE: &str = "bridge";
const NS_REASONER: &str = "reasoner";

/// Engine-level configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Retriever-side embedding dimension.
    pub dim: usize,
    /// Seed for entity/relation/question embeddings.
    pub embed_seed: u64,
    /// Seed for parameter initialisation.
    pub param_seed: u64,
    pub retriever: RetrieverHyper,
    pub reasoner: ToyReasonerConfig,
    /// Number of triples kept in the final subgraph when no per-question
    /// budget is supplied.
    pub subgraph_budget: usize,
    /// Prepend the soft graph token to the reasoner input.
    pub use_graph_token: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dim: 64,
            embed_seed: 11,
            param_seed: 1,
            retriever: RetrieverHyper::default(),
            reasoner: ToyReasonerConfig::default(),
            subgraph_budget: 16,
            use_graph_token: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CoreError::config("embedding dimension must be positive"));
        }
        if self.subgraph_budget == 0 {
            return Err(CoreError::config("subgraph budget must be positive"));
        }
        self.retriever.validate()
    }
}

/// Per-call pipeline switches.
#[derive(Debug, Clone)]
pub struct ForwardKnobs {
    pub trainable_retriever: bool,
    pub trainable_bridge: bool,
    pub trainable_reasoner: bool,
    /// Effective only when the engine config also enables the token.
    pub include_graph_token: bool,
    pub noise: NoisePlan,
    /// Retrieval depth; defaults to the configured layer count.
    pub layers: Option<usize>,
    /// Subgraph triple budget; defaults to the configured budget.
    pub budget: Option<usize>,
}

impl ForwardKnobs {
    /// Deterministic frozen inference: neutral noise, nothing trainable.
    pub fn inference() -> Self {
        ForwardKnobs {
            trainable_retriever: false,
            trainable_bridge: false,
            trainable_reasoner: false,
            include_graph_token: true,
            noise: NoisePlan::Fixed(0.5),
            layers: None,
            budget: None,
        }
    }
}

/// How the candidate answer set is built.
#[derive(Debug, Clone, Copy)]
pub enum CandidateSpec<'a> {
    /// Subgraph entity names plus the given extras (training adds golds).
    SubgraphPlus(&'a [String]),
    /// Exactly the given options (multiple-choice questions).
    Exactly(&'a [String]),
}

/// Everything produced by one pipeline pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub state: RetrievalState,
    pub masks: BTreeMap<TripleId, MaskSample>,
    pub subgraph: Subgraph,
    pub token: Option<GraphToken>,
    pub prompt: VerbalizedPrompt,
    pub feedback: ReasonerFeedback,
    pub candidates: Vec<String>,
    pub retriever_nodes: RetrieverNodes,
    pub bridge_nodes: BridgeNodes,
    /// Wall-clock seconds spent in the grow/prune layers.
    pub retrieval_seconds: f64,
}

/// The assembled system.
#[derive(Clone)]
pub struct Engine {
    pub graph: KnowledgeGraph,
    pub provider: EmbeddingProvider,
    pub table: EmbeddingTable,
    pub retriever: RetrieverParams,
    pub bridge: BridgeParams,
    pub reasoner: ToyReasoner,
    pub config: EngineConfig,
}

impl Engine {
    /// Builds an engine with freshly initialised parameters.
    pub fn new(graph: KnowledgeGraph, config: EngineConfig) -> Result<Self> {
        let provider = EmbeddingProvider::hash_seeded(config.dim, config.embed_seed)?;
        Engine::with_provider(graph, config, provider)
    }

    /// Builds an engine around a caller-supplied embedding provider, e.g.
    /// one loaded from a vector file.
    pub fn with_provider(
        graph: KnowledgeGraph,
        config: EngineConfig,
        provider: EmbeddingProvider,
    ) -> Result<Self> {
        config.validate()?;
        if provider.dim() != config.dim {
            return Err(CoreError::ShapeMismatch {
                op: "engine embedding provider",
                left: Shape::Vector(config.dim),
                right: Shape::Vector(provider.dim()),
            });
        }
        let table = provider.materialize(&graph)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.param_seed);
        let retriever = RetrieverParams::init(config.dim, &mut rng)?;
        let bridge = BridgeParams::init(config.dim, config.reasoner.dim, &mut rng)?;
        let reasoner = ToyReasoner::new(config.reasoner, &mut rng)?;
        Ok(Engine { graph, provider, table, retriever, bridge, reasoner, config })
    }

    /// Resolves seed entity names to ids.
    pub fn resolve_seeds(&self, names: &[String]) -> Result<Vec<EntityId>> {
        names
            .iter()
            .map(|n| {
                self.graph
                    .entity_id(n)
                    .ok_or_else(|| CoreError::Unknown { kind: "entity", id: n.clone() })
            })
            .collect()
    }

    /// Candidate answers: subgraph entity names in ascending entity-id
    /// order, then any extras (training adds the gold answers) not already
    /// present.
    pub fn candidate_answers(&self, subgraph: &Subgraph, extras: &[String]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for e in subgraph.entities(&self.graph)? {
            out.push(self.graph.entity_name(e)?.to_string());
        }
        for extra in extras {
            if !out.iter().any(|c| c == extra) {
                out.push(extra.clone());
            }
        }
        Ok(out)
    }

    /// One full pipeline pass. Returns `None` when retrieval produced no
    /// scored edges (the caller counts the skip).
    pub fn forward(
        &self,
        question: &str,
        seeds: &[EntityId],
        candidates: CandidateSpec<'_>,
        knobs: &ForwardKnobs,
    ) -> Result<Option<ForwardPass>> {
        let layers = knobs.layers.unwrap_or(self.config.retriever.num_layers);
        let budget = knobs.budget.unwrap_or(self.config.subgraph_budget);
        let mut tape = Tape::new();
        let retriever_nodes = RetrieverNodes::bind(&mut tape, &self.retriever, knobs.trainable_retriever)?;
        let bridge_nodes = BridgeNodes::bind(&mut tape, &self.bridge, knobs.trainable_bridge)?;
        let question_node = tape.leaf(Tensor::vector(self.provider.question_vector(question)?)?);
        let rcx = RetrieverCtx {
            g: &self.graph,
            table: &self.table,
            question: question_node,
            nodes: retriever_nodes,
            hyper: self.config.retriever,
        };
        let started = std::time::Instant::now();
        let mut state = RetrievalState::new(&mut tape, &self.graph, &self.table, seeds)?;
        run_retrieval(&mut tape, &mut state, &rcx, layers)?;
        let retrieval_seconds = started.elapsed().as_secs_f64();
        if state.edge_probs.is_empty() {
            return Ok(None);
        }
        let masks = sample_mask(&mut tape, &state, self.config.retriever.temperature, &knobs.noise)?;
        let subgraph = select_subgraph(&tape, &state, &masks, budget)?;
        if subgraph.is_empty() {
            return Ok(None);
        }
        let candidates = match candidates {
            CandidateSpec::SubgraphPlus(extras) => self.candidate_answers(&subgraph, extras)?,
            CandidateSpec::Exactly(options) => {
                if options.is_empty() {
                    return Err(CoreError::domain("candidate option list is empty"));
                }
                options.to_vec()
            }
        };
        let prompt = verbalize(&subgraph, &self.graph, question, None)?;
        let with_token = self.config.use_graph_token && knobs.include_graph_token;
        let token = if with_token {
            Some(sag_pool(&mut tape, &self.graph, &subgraph, &state.ctx, &bridge_nodes, question)?)
        } else {
            None
        };
        let seq = assemble_reasoner_input(&mut tape, token.as_ref(), &prompt, self.reasoner.embedder())?;
        let feedback =
            self.reasoner
                .forward(&mut tape, &seq, question, &candidates, knobs.trainable_reasoner)?;
        Ok(Some(ForwardPass {
            tape,
            state,
            masks,
            subgraph,
            token,
            prompt,
            feedback,
            candidates,
            retriever_nodes,
            bridge_nodes,
            retrieval_seconds,
        }))
    }

    /// Retrieval only, for latency measurement. Returns the state and the
    /// wall-clock seconds spent in the grow/prune layers.
    pub fn retrieve_only(
        &self,
        question: &str,
        seeds: &[EntityId],
        layers: Option<usize>,
    ) -> Result<(RetrievalState, f64)> {
        let layers = layers.unwrap_or(self.config.retriever.num_layers);
        let mut tape = Tape::new();
        let retriever_nodes = RetrieverNodes::bind(&mut tape, &self.retriever, false)?;
        let question_node = tape.leaf(Tensor::vector(self.provider.question_vector(question)?)?);
        let rcx = RetrieverCtx {
            g: &self.graph,
            table: &self.table,
            question: question_node,
            nodes: retriever_nodes,
            hyper: self.config.retriever,
        };
        let started = std::time::Instant::now();
        let mut state = RetrievalState::new(&mut tape, &self.graph, &self.table, seeds)?;
        run_retrieval(&mut tape, &mut state, &rcx, layers)?;
        Ok((state, started.elapsed().as_secs_f64()))
    }

    /// Merged view of all parameters under per-module namespaces.
    pub fn merged_params(&self) -> Result<ParamSet> {
        let mut merged = ParamSet::new();
        merged.absorb(NS_RETRIEVER, &self.retriever.set)?;
        merged.absorb(NS_BRIDGE, &self.bridge.set)?;
        merged.absorb(NS_REASONER, self.reasoner.params())?;
        Ok(merged)
    }

    /// Writes all parameters into one checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.merged_params()?)
    }

    /// Restores all parameters from a checkpoint written by [`Engine::save`].
    pub fn load_params(&mut self, path: &Path) -> Result<()> {
        let merged = checkpoint::load(path)?;
        self.retriever.set.adopt_values(NS_RETRIEVER, &merged)?;
        self.bridge.set.adopt_values(NS_BRIDGE, &merged)?;
        self.reasoner.params_mut().adopt_values(NS_REASONER, &merged)?;
        Ok(())
    }
}
