//! Joint training of the retriever, the bridge, and the reasoner.
//!
//! Each training step runs the pipeline twice on the same question with the
//! same per-edge noise. The first pass holds the retriever fixed and
//! backpropagates the answer loss into the reasoner (and, when the graph
//! token is active, the bridge). The second pass holds the reasoner and the
//! bridge fixed and backpropagates into the retriever: the answer loss
//! reaches it through the soft token, the subgraph log-likelihood ties the
//! sampled mask back to the edge probabilities, and a binary cross-entropy
//! term supervises edge probabilities with entities on shortest seed-answer
//! paths. Freezing a module binds its parameters as constants, so values
//! still flow forward while gradients stop at the module boundary.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{CandidateSpec, Engine, ForwardKnobs, ForwardPass};
use crate::error::{CoreError, Result};
use crate::evalbench::{evaluate, EvalConfig};
use crate::kg::{EntityId, KnowledgeGraph, TripleId};
use crate::numerics::{Adam, AdamConfig, GradMap, Gradients, NodeId, Tape};
use crate::reasoner::{Reasoner, ReasonerFeedback};
use crate::retriever::{MaskSample, NoisePlan, RetrievalState, PROB_CLAMP};

/// One supervised question.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainSample {
    pub question: String,
    /// Names of the topic entities retrieval starts from.
    pub seeds: Vec<String>,
    /// Names of the gold answers.
    pub answers: Vec<String>,
    /// Multiple-choice options; when present the candidate set is exactly
    /// this list instead of the subgraph entities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    /// Labeled reasoning depth, used by the hop classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<usize>,
}

impl TrainSample {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(CoreError::domain("training sample has an empty question"));
        }
        if self.seeds.is_empty() {
            return Err(CoreError::domain(format!(
                "training sample {:?} has no seed entities",
                self.question
            )));
        }
        if self.answers.is_empty() {
            return Err(CoreError::domain(format!(
                "training sample {:?} has no answers",
                self.question
            )));
        }
        if let Some(options) = &self.options {
            for a in &self.answers {
                if !options.contains(a) {
                    return Err(CoreError::domain(format!(
                        "answer {a:?} is missing from the option list of {:?}",
                        self.question
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Entities lying on a shortest path between any seed and any answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPositives {
    pub entities: BTreeSet<EntityId>,
    /// False when no seed-answer pair is connected (or resolvable).
    pub reachable: bool,
}

/// Marks every entity on a shortest seed-to-answer path as positive.
///
/// For a connected pair `(s, a)` an entity `e` lies on a shortest path
/// exactly when `dist(s, e) + dist(e, a) == dist(s, a)`. Distances follow
/// the same undirected adjacency the retriever traverses. Answer names
/// missing from the graph are ignored; if no pair is connected the result
/// is empty and flagged unreachable.
pub fn shortest_path_positives(
    g: &KnowledgeGraph,
    seeds: &[EntityId],
    answer_names: &[String],
) -> Result<PathPositives> {
    let answers: Vec<EntityId> = answer_names.iter().filter_map(|n| g.entity_id(n)).collect();
    let mut dist_cache: BTreeMap<EntityId, Vec<Option<u32>>> = BTreeMap::new();
    for &e in seeds.iter().chain(answers.iter()) {
        if let std::collections::btree_map::Entry::Vacant(slot) = dist_cache.entry(e) {
            slot.insert(g.bfs_distances(&[e])?);
        }
    }
    let mut entities = BTreeSet::new();
    let mut reachable = false;
    for &s in seeds {
        let ds = &dist_cache[&s];
        for &a in &answers {
            let Some(total) = ds[a.index()] else { continue };
            reachable = true;
            let da = &dist_cache[&a];
            for idx in 0..g.entity_count() {
                if let (Some(from_s), Some(from_a)) = (ds[idx], da[idx]) {
                    if from_s + from_a == total {
                        entities.insert(EntityId(idx as u32));
                    }
                }
            }
        }
    }
    Ok(PathPositives { entities, reachable })
}

/// Binary cross-entropy between per-entity retrieval scores and shortest-path
/// labels.
///
/// An entity scored by retrieval gets the maximum probability over its
/// adjacent scored edges. Positives missing from the scored region enter as
/// the worst-case constant `-ln(PROB_CLAMP)` so the loss value reflects them
/// even though no gradient can. The result is the mean over scored entities
/// plus missed positives; with no positives at all it is the constant zero.
pub fn graph_supervision_loss(
    tape: &mut Tape,
    state: &RetrievalState,
    g: &KnowledgeGraph,
    positives: &PathPositives,
) -> Result<NodeId> {
    if positives.entities.is_empty() {
        return tape.constant(0.0);
    }
    let mut entity_scores: BTreeMap<EntityId, NodeId> = BTreeMap::new();
    for (&tid, &p) in &state.edge_probs {
        let t = g.triple(tid)?;
        for e in [t.head, t.tail] {
            let merged = match entity_scores.get(&e) {
                Some(&prev) => tape.max_pair(prev, p)?,
                None => p,
            };
            entity_scores.insert(e, merged);
        }
    }
    let mut terms = Vec::new();
    for (&e, &score) in &entity_scores {
        let p = tape.clamp(score, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        let term = if positives.entities.contains(&e) {
            let lp = tape.log(p)?;
            tape.affine(lp, -1.0, 0.0)
        } else {
            let q = tape.affine(p, -1.0, 1.0);
            let lq = tape.log(q)?;
            tape.affine(lq, -1.0, 0.0)
        };
        terms.push(term);
    }
    let missed = positives
        .entities
        .iter()
        .filter(|e| !entity_scores.contains_key(e))
        .count();
    for _ in 0..missed {
        terms.push(tape.constant(-PROB_CLAMP.ln())?);
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.affine(total, 1.0 / terms.len() as f64, 0.0))
}

/// Negative log-likelihood of the sampled mask under the edge probabilities:
/// `-sum_i [ m_i ln p_i + (1 - m_i) ln (1 - p_i) ]` over all scored edges.
///
/// Both the mask and the probability stay on the tape, so gradients reach
/// the retriever through the sampling path as well as the direct one.
pub fn mask_log_likelihood_loss(
    tape: &mut Tape,
    probs: &BTreeMap<TripleId, NodeId>,
    masks: &BTreeMap<TripleId, MaskSample>,
) -> Result<NodeId> {
    if probs.is_empty() {
        return Err(CoreError::domain("mask likelihood over an empty edge set"));
    }
    let mut terms = Vec::new();
    for (tid, &p_node) in probs {
        let mask = masks.get(tid).ok_or_else(|| CoreError::Unknown {
            kind: "mask sample",
            id: tid.0.to_string(),
        })?;
        let p = tape.clamp(p_node, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        let lp = tape.log(p)?;
        let q = tape.affine(p, -1.0, 1.0);
        let lq = tape.log(q)?;
        let m = mask.node;
        let not_m = tape.affine(m, -1.0, 1.0);
        let on = tape.mul(m, lp)?;
        let off = tape.mul(not_m, lq)?;
        terms.push(tape.add(on, off)?);
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.affine(total, -1.0, 0.0))
}

/// Mean negative log-probability of the gold answers present in the
/// candidate list. Errors when none of the golds appear.
pub fn mean_gold_nll(
    tape: &mut Tape,
    feedback: &ReasonerFeedback,
    golds: &[String],
) -> Result<NodeId> {
    let mut picked = Vec::new();
    for gold in golds {
        if let Some(i) = feedback.candidates.iter().position(|c| c == gold) {
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
    }
    if picked.is_empty() {
        return Err(CoreError::Unknown { kind: "candidate answer", id: golds.join(", ") });
    }
    let nodes: Vec<NodeId> = picked
        .iter()
        .map(|&i| tape.index(feedback.log_probs, i))
        .collect::<Result<_>>()?;
    let total = tape.add_n(&nodes)?;
    Ok(tape.affine(total, -1.0 / picked.len() as f64, 0.0))
}

/// Which parameter groups learn, and from which terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Answer loss trains the reasoner and the bridge; the retriever learns
    /// from the answer loss through the token, the mask likelihood, and the
    /// shortest-path supervision.
    #[default]
    Full,
    /// Shortest-path supervision off; the retriever learns only from the
    /// reasoner's answer distribution.
    FeedbackOnly,
    /// No coupling: the reasoner trains on the verbalized prompt alone
    /// (token off, bridge inert) and the retriever learns only from the
    /// shortest-path supervision.
    Separate,
}

/// Scale factors applied to the loss gradients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Answer loss into the reasoner and the bridge.
    pub answer: f64,
    /// Answer loss and mask likelihood into the retriever.
    pub feedback: f64,
    /// Shortest-path supervision into the retriever.
    pub graph_supervision: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { answer: 1.0, feedback: 1.0, graph_supervision: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("answer", self.answer),
            ("feedback", self.feedback),
            ("graph_supervision", self.graph_supervision),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(CoreError::config(format!(
                    "loss weight {name} must be finite and nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Unweighted loss values from one training step, plus their weighted total.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct LossReport {
    /// Mean gold NLL on the reasoner pass.
    pub answer_loss: f64,
    /// Mean gold NLL on the retriever pass (zero in separate mode).
    pub feedback_loss: f64,
    /// Mask negative log-likelihood (zero in separate mode).
    pub mask_likelihood_loss: f64,
    /// Shortest-path BCE (zero in feedback-only mode).
    pub graph_supervision_loss: f64,
    pub total: f64,
    /// True when no shortest-path positives existed for a mode that wanted
    /// them, so the step fell back to feedback-style terms only.
    pub degraded_to_feedback_only: bool,
}

/// Why a sample did not produce a parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Retrieval scored no edges or selected an empty subgraph.
    EmptyRetrieval,
    /// A loss or gradient went non-finite.
    NonFiniteLoss,
}

/// Result of a single-sample step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied(LossReport),
    Skipped(SkipReason),
}

/// Trainer construction knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Seed for shuffling and per-step mask noise.
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: TrainMode::Full,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed: 7,
        }
    }
}

/// Early-stopping fit loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub eval: EvalConfig,
    /// JSONL file receiving one record per epoch.
    pub curves_path: Option<PathBuf>,
    /// Checkpoint file holding the best parameters seen so far.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 30,
            batch_size: 2,
            patience: 5,
            eval: EvalConfig::default(),
            curves_path: None,
            checkpoint_path: None,
        }
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_losses: LossReport,
    pub applied: usize,
    pub skipped: usize,
    pub dev_hits_at_1: f64,
    pub dev_macro_f1: f64,
    pub wall_seconds: f64,
}

/// Outcome of the fit loop.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub best_epoch: usize,
    pub best_hits_at_1: f64,
    pub best_macro_f1: f64,
    pub epochs_run: usize,
    pub curves: Vec<EpochRecord>,
}

/// Gradients for one module, keyed by parameter name.
struct ModuleGrads {
    reasoner: GradMap,
    bridge: GradMap,
    retriever: GradMap,
}

/// One sample's losses and gradients before any parameters move.
struct SamplePass {
    report: LossReport,
    grads: ModuleGrads,
}

enum PassOutcome {
    Computed(Box<SamplePass>),
    Skipped(SkipReason),
}

/// Joint optimiser over the three parameter groups.
pub struct Trainer {
    pub engine: Engine,
    config: TrainerConfig,
    adam_reasoner: Adam,
    adam_bridge: Adam,
    adam_retriever: Adam,
    rng: ChaCha8Rng,
    skipped_empty: usize,
    skipped_nonfinite: usize,
}

impl Trainer {
    pub fn new(engine: Engine, config: TrainerConfig) -> Result<Self> {
        config.weights.validate()?;
        Ok(Trainer {
            engine,
            adam_reasoner: Adam::new(config.adam)?,
            adam_bridge: Adam::new(config.adam)?,
            adam_retriever: Adam::new(config.adam)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            skipped_empty: 0,
            skipped_nonfinite: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// (empty-retrieval skips, non-finite skips) accumulated so far.
    pub fn skip_counts(&self) -> (usize, usize) {
        (self.skipped_empty, self.skipped_nonfinite)
    }

    fn candidate_spec<'a>(sample: &'a TrainSample) -> CandidateSpec<'a> {
        match &sample.options {
            Some(options) => CandidateSpec::Exactly(options),
            None => CandidateSpec::SubgraphPlus(&sample.answers),
        }
    }

    /// Runs both passes for one sample and extracts gradients, without
    /// touching any parameters.
    fn sample_pass(&mut self, sample: &TrainSample) -> Result<PassOutcome> {
        sample.validate()?;
        let mode = self.config.mode;
        let w = self.config.weights;
        let seeds = self.engine.resolve_seeds(&sample.seeds)?;
        let noise = NoisePlan::Seeded(self.rng.gen());
        let coupled = mode != TrainMode::Separate;

        let reasoner_knobs = ForwardKnobs {
            trainable_retriever: false,
            trainable_bridge: coupled,
            trainable_reasoner: true,
            include_graph_token: coupled,
            noise: noise.clone(),
            layers: None,
            budget: None,
        };
        let Some(mut pass_a) =
            self.engine
                .forward(&sample.question, &seeds, Self::candidate_spec(sample), &reasoner_knobs)?
        else {
            self.skipped_empty += 1;
            return Ok(PassOutcome::Skipped(SkipReason::EmptyRetrieval));
        };
        let answer_loss = mean_gold_nll(&mut pass_a.tape, &pass_a.feedback, &sample.answers)?;
        let answer_value = pass_a.tape.scalar_value(answer_loss);
        let weighted_a = pass_a.tape.affine(answer_loss, w.answer, 0.0);
        let grads_a = pass_a.tape.backward(weighted_a)?;

        let retriever_knobs = ForwardKnobs {
            trainable_retriever: true,
            trainable_bridge: false,
            trainable_reasoner: false,
            include_graph_token: coupled,
            noise,
            layers: None,
            budget: None,
        };
        let Some(mut pass_b) =
            self.engine
                .forward(&sample.question, &seeds, Self::candidate_spec(sample), &retriever_knobs)?
        else {
            self.skipped_empty += 1;
            return Ok(PassOutcome::Skipped(SkipReason::EmptyRetrieval));
        };

        let positives = if mode == TrainMode::FeedbackOnly {
            PathPositives { entities: BTreeSet::new(), reachable: false }
        } else {
            shortest_path_positives(&self.engine.graph, &seeds, &sample.answers)?
        };
        let degraded = mode != TrainMode::FeedbackOnly && positives.entities.is_empty();

        let mut feedback_value = 0.0;
        let mut likelihood_value = 0.0;
        let mut supervision_value = 0.0;
        let mut parts = Vec::new();
        if coupled {
            let feedback_loss = mean_gold_nll(&mut pass_b.tape, &pass_b.feedback, &sample.answers)?;
            let likelihood_loss = mask_log_likelihood_loss(
                &mut pass_b.tape,
                &pass_b.state.edge_probs,
                &pass_b.masks,
            )?;
            feedback_value = pass_b.tape.scalar_value(feedback_loss);
            likelihood_value = pass_b.tape.scalar_value(likelihood_loss);
            let pair = pass_b.tape.add(feedback_loss, likelihood_loss)?;
            parts.push(pass_b.tape.affine(pair, w.feedback, 0.0));
        }
        if mode != TrainMode::FeedbackOnly {
            let supervision = graph_supervision_loss(
                &mut pass_b.tape,
                &pass_b.state,
                &self.engine.graph,
                &positives,
            )?;
            supervision_value = pass_b.tape.scalar_value(supervision);
            parts.push(pass_b.tape.affine(supervision, w.graph_supervision, 0.0));
        }
        let loss_b = pass_b.tape.add_n(&parts)?;
        let grads_b = pass_b.tape.backward(loss_b)?;

        let total = w.answer * answer_value
            + w.feedback * (feedback_value + likelihood_value)
            + w.graph_supervision * supervision_value;
        let report = LossReport {
            answer_loss: answer_value,
            feedback_loss: feedback_value,
            mask_likelihood_loss: likelihood_value,
            graph_supervision_loss: supervision_value,
            total,
            degraded_to_feedback_only: degraded,
        };
        if !report.total.is_finite() {
            self.skipped_nonfinite += 1;
            return Ok(PassOutcome::Skipped(SkipReason::NonFiniteLoss));
        }

        let grads = ModuleGrads {
            reasoner: collect_grads(&grads_a, &pass_a.feedback.param_bindings, &pass_a),
            bridge: if coupled {
                collect_named(&grads_a, &pass_a.bridge_nodes.bindings(), &pass_a)
            } else {
                GradMap::new()
            },
            retriever: collect_named(&grads_b, &pass_b.retriever_nodes.bindings(), &pass_b),
        };
        if [&grads.reasoner, &grads.bridge, &grads.retriever]
            .iter()
            .any(|m| m.values().flatten().any(|v| !v.is_finite()))
        {
            self.skipped_nonfinite += 1;
            return Ok(PassOutcome::Skipped(SkipReason::NonFiniteLoss));
        }
        Ok(PassOutcome::Computed(Box::new(SamplePass { report, grads })))
    }

    fn apply(&mut self, grads: &ModuleGrads) -> Result<()> {
        if !grads.reasoner.is_empty() {
            self.adam_reasoner.step(self.engine.reasoner.params_mut(), &grads.reasoner)?;
        }
        if !grads.bridge.is_empty() {
            self.adam_bridge.step(&mut self.engine.bridge.set, &grads.bridge)?;
        }
        if !grads.retriever.is_empty() {
            self.adam_retriever.step(&mut self.engine.retriever.set, &grads.retriever)?;
        }
        Ok(())
    }

    /// One sample, one optimiser step.
    pub fn joint_step(&mut self, sample: &TrainSample) -> Result<StepOutcome> {
        match self.sample_pass(sample)? {
            PassOutcome::Skipped(reason) => Ok(StepOutcome::Skipped(reason)),
            PassOutcome::Computed(pass) => {
                self.apply(&pass.grads)?;
                Ok(StepOutcome::Applied(pass.report))
            }
        }
    }

    /// Averages gradients over the batch and commits one optimiser step.
    pub fn step_batch(&mut self, samples: &[TrainSample]) -> Result<BatchReport> {
        let mut acc: Option<ModuleGrads> = None;
        let mut reports = Vec::new();
        let mut skipped = 0usize;
        for sample in samples {
            match self.sample_pass(sample)? {
                PassOutcome::Skipped(_) => skipped += 1,
                PassOutcome::Computed(pass) => {
                    reports.push(pass.report);
                    acc = Some(match acc {
                        None => pass.grads,
                        Some(mut sum) => {
                            merge_grads(&mut sum.reasoner, &pass.grads.reasoner)?;
                            merge_grads(&mut sum.bridge, &pass.grads.bridge)?;
                            merge_grads(&mut sum.retriever, &pass.grads.retriever)?;
                            sum
                        }
                    });
                }
            }
        }
        let applied = reports.len();
        if let Some(mut grads) = acc {
            let inv = 1.0 / applied as f64;
            for map in [&mut grads.reasoner, &mut grads.bridge, &mut grads.retriever] {
                for g in map.values_mut() {
                    for v in g.iter_mut() {
                        *v *= inv;
                    }
                }
            }
            self.apply(&grads)?;
        }
        Ok(BatchReport { applied, skipped, mean_losses: mean_report(&reports) })
    }

    /// Epoch loop with dev-set early stopping on Hits@1.
    ///
    /// Shuffles the training set each epoch, evaluates on the dev split
    /// after every epoch, checkpoints on improvement, and stops once the
    /// number of epochs since the best result exceeds the patience. When a
    /// checkpoint path is set, the best parameters are restored at the end.
    pub fn fit(
        &mut self,
        train: &[TrainSample],
        dev: &[TrainSample],
        cfg: &FitConfig,
    ) -> Result<FitResult> {
        if train.is_empty() {
            return Err(CoreError::config("training split is empty"));
        }
        if dev.is_empty() {
            return Err(CoreError::config("development split is empty; early stopping needs one"));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(CoreError::config("epochs and batch_size must be positive"));
        }
        let mut curves_file = match &cfg.curves_path {
            Some(p) => Some(std::fs::File::create(p).map_err(|e| CoreError::io(p.display().to_string(), e))?),
            None => None,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut curves = Vec::new();
        let mut best_epoch = 0usize;
        let mut best_hits = f64::NEG_INFINITY;
        let mut best_f1 = 0.0;
        let mut epochs_run = 0usize;

        for epoch in 0..cfg.epochs {
            let started = Instant::now();
            order.shuffle(&mut self.rng);
            let mut applied = 0usize;
            let mut skipped = 0usize;
            let mut reports = Vec::new();
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<TrainSample> = chunk.iter().map(|&i| train[i].clone()).collect();
                let outcome = self.step_batch(&batch)?;
                applied += outcome.applied;
                skipped += outcome.skipped;
                if let Some(mean) = outcome.mean_losses {
                    for _ in 0..outcome.applied {
                        reports.push(mean.clone());
                    }
                }
            }
            if applied == 0 {
                return Err(CoreError::config(format!(
                    "every training sample was skipped in epoch {epoch}; \
                     retrieval never produced a scorable subgraph"
                )));
            }
            let dev_report = evaluate(&self.engine, dev, &cfg.eval)?;
            let record = EpochRecord {
                epoch,
                mean_losses: mean_report(&reports).unwrap_or_default(),
                applied,
                skipped,
                dev_hits_at_1: dev_report.hits_at_1,
                dev_macro_f1: dev_report.macro_f1,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            if let Some(f) = curves_file.as_mut() {
                let line = serde_json::to_string(&record)
                    .map_err(|e| CoreError::numeric(format!("curve record serialisation: {e}")))?;
                writeln!(f, "{line}").map_err(|e| {
                    CoreError::io(cfg.curves_path.as_ref().unwrap().display().to_string(), e)
                })?;
            }
            curves.push(record);
            epochs_run = epoch + 1;

            if dev_report.hits_at_1 > best_hits {
                best_hits = dev_report.hits_at_1;
                best_f1 = dev_report.macro_f1;
                best_epoch = epoch;
                if let Some(p) = &cfg.checkpoint_path {
                    self.engine.save(p)?;
                }
            } else if epoch - best_epoch > cfg.patience {
                break;
            }
        }
        if let Some(p) = &cfg.checkpoint_path {
            self.engine.load_params(p)?;
        }
        Ok(FitResult {
            best_epoch,
            best_hits_at_1: best_hits,
            best_macro_f1: best_f1,
            epochs_run,
            curves,
        })
    }
}

/// Result of one batched step.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub applied: usize,
    pub skipped: usize,
    /// Field-wise mean over the applied samples; `None` when all skipped.
    pub mean_losses: Option<LossReport>,
}

fn mean_report(reports: &[LossReport]) -> Option<LossReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(LossReport {
        answer_loss: reports.iter().map(|r| r.answer_loss).sum::<f64>() / n,
        feedback_loss: reports.iter().map(|r| r.feedback_loss).sum::<f64>() / n,
        mask_likelihood_loss: reports.iter().map(|r| r.mask_likelihood_loss).sum::<f64>() / n,
        graph_supervision_loss: reports.iter().map(|r| r.graph_supervision_loss).sum::<f64>() / n,
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
        degraded_to_feedback_only: reports.iter().any(|r| r.degraded_to_feedback_only),
    })
}

fn merge_grads(into: &mut GradMap, from: &GradMap) -> Result<()> {
    for (name, g) in from {
        match into.get_mut(name) {
            Some(acc) => {
                if acc.len() != g.len() {
                    return Err(CoreError::domain(format!(
                        "gradient length mismatch for {name} while batching"
                    )));
                }
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => {
                into.insert(name.clone(), g.clone());
            }
        }
    }
    Ok(())
}

fn grad_or_zeros(grads: &Gradients, node: NodeId, pass: &ForwardPass) -> Vec<f64> {
    match grads.of(node) {
        Some(g) => g.to_vec(),
        None => vec![0.0; pass.tape.values(node).len()],
    }
}

fn collect_grads(
    grads: &Gradients,
    bindings: &[(String, NodeId)],
    pass: &ForwardPass,
) -> GradMap {
    bindings
        .iter()
        .map(|(name, node)| (name.clone(), grad_or_zeros(grads, *node, pass)))
        .collect()
}

fn collect_named(
    grads: &Gradients,
    bindings: &[(&'static str, NodeId)],
    pass: &ForwardPass,
) -> GradMap {
    bindings
        .iter()
        .map(|(name, node)| ((*name).to_string(), grad_or_zeros(grads, *node, pass)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::numerics::Tensor;
    use crate::reasoner::ToyReasonerConfig;

    fn branching_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_names([
            ("a", "r1", "b"),
            ("a", "r1", "c"),
            ("b", "r2", "d"),
            ("b", "r2", "e"),
            ("c", "r2", "f"),
            ("c", "r2", "g2"),
        ])
        .0
    }

    fn small_config() -> EngineConfig {
        EngineConfig {
            dim: 8,
            reasoner: ToyReasonerConfig { dim: 8, embed_seed: 17 },
            subgraph_budget: 8,
            ..EngineConfig::default()
        }
    }

    fn sample(question: &str, seeds: &[&str], answers: &[&str]) -> TrainSample {
        TrainSample {
            question: question.to_string(),
            seeds: seeds.iter().map(|s| s.to_string()).collect(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            options: None,
            hops: None,
        }
    }

    fn param_bits(engine: &Engine) -> Vec<(String, Vec<u64>)> {
        engine
            .merged_params()
            .unwrap()
            .iter()
            .map(|p| (p.name.clone(), p.tensor.values.iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    fn names_with(prefix: &str, bits: &[(String, Vec<u64>)]) -> Vec<(String, Vec<u64>)> {
        bits.iter().filter(|(n, _)| n.starts_with(prefix)).cloned().collect()
    }

    #[test]
    fn positives_cover_a_seed_that_is_its_own_answer() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b")]);
        let a = g.entity_id("a").unwrap();
        let p = shortest_path_positives(&g, &[a], &["a".to_string()]).unwrap();
        assert!(p.reachable);
        assert_eq!(p.entities, BTreeSet::from([a]));
    }

    #[test]
    fn positives_cover_every_chain_entity() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let a = g.entity_id("a").unwrap();
        let p = shortest_path_positives(&g, &[a], &["d".to_string()]).unwrap();
        let expect: BTreeSet<EntityId> =
            ["a", "b", "c", "d"].iter().map(|n| g.entity_id(n).unwrap()).collect();
        assert_eq!(p.entities, expect);
    }

    #[test]
    fn positives_cover_both_branches_of_a_diamond_but_not_offshoots() {
        let (g, _) = KnowledgeGraph::from_names([
            ("a", "r", "b"),
            ("a", "r", "c"),
            ("b", "r", "d"),
            ("c", "r", "d"),
            ("d", "r", "e"),
        ]);
        let a = g.entity_id("a").unwrap();
        let p = shortest_path_positives(&g, &[a], &["d".to_string()]).unwrap();
        let expect: BTreeSet<EntityId> =
            ["a", "b", "c", "d"].iter().map(|n| g.entity_id(n).unwrap()).collect();
        assert_eq!(p.entities, expect);
        assert!(!p.entities.contains(&g.entity_id("e").unwrap()));
    }

    #[test]
    fn positives_flag_unreachable_pairs() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("c", "r", "d")]);
        let a = g.entity_id("a").unwrap();
        let p = shortest_path_positives(&g, &[a], &["c".to_string()]).unwrap();
        assert!(!p.reachable);
        assert!(p.entities.is_empty());

        let missing = shortest_path_positives(&g, &[a], &["zzz".to_string()]).unwrap();
        assert!(!missing.reachable);
        assert!(missing.entities.is_empty());
    }

    /// Independent oracle: enumerate every simple path of minimal length by
    /// depth-first search and take the union of its nodes.
    fn enumerate_shortest_path_nodes(
        g: &KnowledgeGraph,
        s: EntityId,
        a: EntityId,
        d: u32,
    ) -> BTreeSet<EntityId> {
        let mut nodes = BTreeSet::new();
        let mut path = vec![s];
        fn walk(
            g: &KnowledgeGraph,
            path: &mut Vec<EntityId>,
            target: EntityId,
            remaining: u32,
            out: &mut BTreeSet<EntityId>,
        ) {
            let here = *path.last().unwrap();
            if here == target && remaining == 0 {
                out.extend(path.iter().copied());
                return;
            }
            if remaining == 0 {
                return;
            }
            for tid in g.incident(here).unwrap() {
                let t = g.triple(*tid).unwrap();
                let next = g.other_endpoint(t, here);
                if !path.contains(&next) {
                    path.push(next);
                    walk(g, path, target, remaining - 1, out);
                    path.pop();
                }
            }
        }
        walk(g, &mut path, a, d, &mut nodes);
        nodes
    }

    #[test]
    fn positives_match_exhaustive_path_enumeration_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..40 {
            let n = rng.gen_range(3..10usize);
            let m = rng.gen_range(n..(2 * n));
            let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let mut triples = Vec::new();
            for _ in 0..m {
                let h = rng.gen_range(0..n);
                let t = rng.gen_range(0..n);
                if h == t {
                    continue;
                }
                triples.push((names[h].clone(), "r".to_string(), names[t].clone()));
            }
            if triples.is_empty() {
                continue;
            }
            let (g, _) =
                KnowledgeGraph::from_names(triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
            let ids: Vec<EntityId> = (0..g.entity_count()).map(|i| EntityId(i as u32)).collect();
            let s = ids[rng.gen_range(0..ids.len())];
            let a = ids[rng.gen_range(0..ids.len())];
            let answer = g.entity_name(a).unwrap().to_string();

            let got = shortest_path_positives(&g, &[s], &[answer]).unwrap();
            let dist = g.bfs_distances(&[s]).unwrap();
            match dist[a.index()] {
                None => {
                    assert!(!got.reachable);
                    assert!(got.entities.is_empty());
                }
                Some(d) => {
                    let expect = enumerate_shortest_path_nodes(&g, s, a, d);
                    assert!(got.reachable);
                    assert_eq!(got.entities, expect, "graph: {}", g.to_tsv());
                }
            }
        }
    }

    fn probs_on_tape(tape: &mut Tape, values: &[f64]) -> BTreeMap<TripleId, NodeId> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let node = tape.leaf(Tensor::scalar(v).unwrap().with_grad());
                (TripleId(i as u32), node)
            })
            .collect()
    }

    fn supervision_state(probs: BTreeMap<TripleId, NodeId>) -> RetrievalState {
        RetrievalState {
            frontier: BTreeSet::new(),
            ctx: BTreeMap::new(),
            edge_scores: BTreeMap::new(),
            edge_probs: probs,
            pruned: BTreeSet::new(),
            layer_index: 0,
            exhausted: false,
            layer_traces: Vec::new(),
        }
    }

    #[test]
    fn supervision_on_one_balanced_edge_is_ln_two() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b")]);
        let mut tape = Tape::new();
        let probs = probs_on_tape(&mut tape, &[0.5]);
        let state = supervision_state(probs);
        let positives = PathPositives {
            entities: BTreeSet::from([g.entity_id("a").unwrap()]),
            reachable: true,
        };
        let loss = graph_supervision_loss(&mut tape, &state, &g, &positives).unwrap();
        let v = tape.scalar_value(loss);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn supervision_matches_a_hand_computed_chain() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let mut tape = Tape::new();
        let probs = probs_on_tape(&mut tape, &[0.9, 0.6, 0.2]);
        let state = supervision_state(probs);
        let positives = PathPositives {
            entities: ["a", "b", "c"].iter().map(|n| g.entity_id(n).unwrap()).collect(),
            reachable: true,
        };
        let loss = graph_supervision_loss(&mut tape, &state, &g, &positives).unwrap();
        let v = tape.scalar_value(loss);
        let expect = (-(0.9f64.ln()) - 0.9f64.ln() - 0.6f64.ln() - (1.0 - 0.2f64).ln()) / 4.0;
        assert!((v - expect).abs() < 1e-12, "got {v}, want {expect}");
    }

    #[test]
    fn supervision_charges_missed_positives_the_floor_constant() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b"), ("c", "r", "d")]);
        let mut tape = Tape::new();
        let probs = probs_on_tape(&mut tape, &[0.2]);
        let state = supervision_state(probs);
        let positives = PathPositives {
            entities: BTreeSet::from([g.entity_id("c").unwrap()]),
            reachable: true,
        };
        let loss = graph_supervision_loss(&mut tape, &state, &g, &positives).unwrap();
        let v = tape.scalar_value(loss);
        let expect = (2.0 * -(0.8f64.ln()) + -(1e-6f64.ln())) / 3.0;
        assert!((v - expect).abs() < 1e-12, "got {v}, want {expect}");
    }

    #[test]
    fn supervision_without_positives_is_zero() {
        let (g, _) = KnowledgeGraph::from_names([("a", "r", "b")]);
        let mut tape = Tape::new();
        let probs = probs_on_tape(&mut tape, &[0.4]);
        let state = supervision_state(probs);
        let positives = PathPositives { entities: BTreeSet::new(), reachable: false };
        let loss = graph_supervision_loss(&mut tape, &state, &g, &positives).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn mask_likelihood_matches_the_bernoulli_formula() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.7).unwrap().with_grad());
        let m = tape.constant(0.3).unwrap();
        let probs = BTreeMap::from([(TripleId(0), p)]);
        let masks = BTreeMap::from([(TripleId(0), MaskSample { node: m, value: 0.3, eps: 0.5 })]);
        let loss = mask_log_likelihood_loss(&mut tape, &probs, &masks).unwrap();
        let v = tape.scalar_value(loss);
        let expect = -(0.3 * 0.7f64.ln() + 0.7 * 0.3f64.ln());
        assert!((v - expect).abs() < 1e-12, "got {v}, want {expect}");

        let grads = tape.backward(loss).unwrap();
        assert!(grads.of(p).unwrap()[0].is_finite());
    }

    fn trainer(mode: TrainMode, weights: LossWeights, lr: f64, seed: u64) -> Trainer {
        let engine = Engine::new(branching_graph(), small_config()).unwrap();
        Trainer::new(
            engine,
            TrainerConfig {
                mode,
                weights,
                adam: AdamConfig { learning_rate: lr, ..AdamConfig::default() },
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn answer_only_weights_leave_the_retriever_bit_identical() {
        let weights = LossWeights { answer: 1.0, feedback: 0.0, graph_supervision: 0.0 };
        let mut t = trainer(TrainMode::Full, weights, 0.05, 3);
        let before = param_bits(&t.engine);
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap();
        assert!(matches!(outcome, StepOutcome::Applied(_)));
        let after = param_bits(&t.engine);
        assert_eq!(
            names_with("retriever.", &before),
            names_with("retriever.", &after),
            "zero-weight retriever terms must not move retriever parameters"
        );
        assert_ne!(names_with("reasoner.", &before), names_with("reasoner.", &after));
        assert_ne!(names_with("bridge.", &before), names_with("bridge.", &after));
    }

    #[test]
    fn retriever_only_weights_leave_reasoner_and_bridge_bit_identical() {
        let weights = LossWeights { answer: 0.0, feedback: 1.0, graph_supervision: 1.0 };
        let mut t = trainer(TrainMode::Full, weights, 0.05, 3);
        let before = param_bits(&t.engine);
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap();
        assert!(matches!(outcome, StepOutcome::Applied(_)));
        let after = param_bits(&t.engine);
        assert_eq!(names_with("reasoner.", &before), names_with("reasoner.", &after));
        assert_eq!(names_with("bridge.", &before), names_with("bridge.", &after));
        assert_ne!(names_with("retriever.", &before), names_with("retriever.", &after));
    }

    #[test]
    fn separate_mode_never_touches_the_bridge() {
        let mut t = trainer(TrainMode::Separate, LossWeights::default(), 0.05, 3);
        let before = param_bits(&t.engine);
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap();
        let StepOutcome::Applied(report) = outcome else { panic!("expected an applied step") };
        assert_eq!(report.feedback_loss, 0.0);
        assert_eq!(report.mask_likelihood_loss, 0.0);
        assert!(report.graph_supervision_loss > 0.0);
        let after = param_bits(&t.engine);
        assert_eq!(names_with("bridge.", &before), names_with("bridge.", &after));
        assert_ne!(names_with("reasoner.", &before), names_with("reasoner.", &after));
        assert_ne!(names_with("retriever.", &before), names_with("retriever.", &after));
    }

    #[test]
    fn full_mode_degrades_when_answers_are_not_in_the_graph() {
        let mut t = trainer(TrainMode::Full, LossWeights::default(), 0.05, 3);
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["offgraph"])).unwrap();
        let StepOutcome::Applied(report) = outcome else { panic!("expected an applied step") };
        assert!(report.degraded_to_feedback_only);
        assert_eq!(report.graph_supervision_loss, 0.0);
        assert!(report.answer_loss.is_finite());
        assert!(report.feedback_loss > 0.0);
    }

    #[test]
    fn feedback_only_mode_reports_no_supervision_term() {
        let mut t = trainer(TrainMode::FeedbackOnly, LossWeights::default(), 0.05, 3);
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap();
        let StepOutcome::Applied(report) = outcome else { panic!("expected an applied step") };
        assert_eq!(report.graph_supervision_loss, 0.0);
        assert!(!report.degraded_to_feedback_only);
        assert!(report.mask_likelihood_loss > 0.0);
    }

    #[test]
    fn report_total_is_the_weighted_sum_of_its_parts() {
        let weights = LossWeights { answer: 0.7, feedback: 1.3, graph_supervision: 2.1 };
        let mut t = trainer(TrainMode::Full, weights, 0.05, 5);
        let StepOutcome::Applied(r) = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap()
        else {
            panic!("expected an applied step")
        };
        let expect = 0.7 * r.answer_loss
            + 1.3 * (r.feedback_loss + r.mask_likelihood_loss)
            + 2.1 * r.graph_supervision_loss;
        assert!((r.total - expect).abs() < 1e-12);
    }

    #[test]
    fn same_seed_trainers_produce_identical_steps_and_parameters() {
        let samples = [
            sample("which one ?", &["a"], &["d"]),
            sample("what else ?", &["a"], &["f"]),
            sample("and this ?", &["b"], &["e"]),
        ];
        let run = || {
            let mut t = trainer(TrainMode::Full, LossWeights::default(), 0.02, 11);
            let mut reports = Vec::new();
            for s in &samples {
                if let StepOutcome::Applied(r) = t.joint_step(s).unwrap() {
                    reports.push(serde_json::to_string(&r).unwrap());
                }
            }
            (reports, param_bits(&t.engine))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batched_gradients_average_across_the_batch() {
        let samples =
            [sample("which one ?", &["a"], &["d"]), sample("what else ?", &["a"], &["f"])];
        let mut t = trainer(TrainMode::Full, LossWeights::default(), 0.02, 11);
        let report = t.step_batch(&samples).unwrap();
        assert_eq!(report.applied, 2);
        assert_eq!(report.skipped, 0);
        let mean = report.mean_losses.unwrap();
        assert!(mean.total.is_finite());
    }

    #[test]
    fn exhausted_retrieval_is_skipped_and_counted() {
        let mut cfg = small_config();
        cfg.retriever.sigma = 0.9999;
        cfg.retriever.prune_trigger_budget = 0;
        let engine = Engine::new(branching_graph(), cfg).unwrap();
        let mut t = Trainer::new(engine, TrainerConfig::default()).unwrap();
        let outcome = t.joint_step(&sample("which one ?", &["a"], &["d"])).unwrap();
        assert_eq!(outcome, StepOutcome::Skipped(SkipReason::EmptyRetrieval));
        assert_eq!(t.skip_counts(), (1, 0));
    }

    #[test]
    fn fit_errors_when_every_sample_is_skipped() {
        let mut cfg = small_config();
        cfg.retriever.sigma = 0.9999;
        cfg.retriever.prune_trigger_budget = 0;
        let engine = Engine::new(branching_graph(), cfg).unwrap();
        let mut t = Trainer::new(engine, TrainerConfig::default()).unwrap();
        let data = [sample("which one ?", &["a"], &["d"])];
        let err = t.fit(&data, &data, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)), "got {err}");
    }

    #[test]
    fn fit_overfits_two_questions_to_perfect_hits() {
        let train = [
            sample("which city ?", &["a"], &["d"]),
            sample("which river ?", &["a"], &["f"]),
        ];
        let mut t = trainer(TrainMode::Full, LossWeights::default(), 0.05, 13);
        let cfg = FitConfig { epochs: 60, batch_size: 2, patience: 60, ..FitConfig::default() };
        let result = t.fit(&train, &train, &cfg).unwrap();
        assert_eq!(result.best_hits_at_1, 1.0, "failed to overfit: {result:?}");
        assert!(result.curves.len() == result.epochs_run);
    }

    #[test]
    fn fit_with_zero_patience_stops_right_after_the_best_epoch() {
        let train = [
            sample("which city ?", &["a"], &["d"]),
            sample("which river ?", &["a"], &["f"]),
        ];
        let mut t = trainer(TrainMode::Full, LossWeights::default(), 1e-12, 13);
        let cfg = FitConfig { epochs: 10, batch_size: 2, patience: 0, ..FitConfig::default() };
        let result = t.fit(&train, &train, &cfg).unwrap();
        assert_eq!(result.best_epoch, 0);
        assert_eq!(result.epochs_run, 2);
    }

    #[test]
    fn fit_restores_the_best_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let train = [
            sample("which city ?", &["a"], &["d"]),
            sample("which river ?", &["a"], &["f"]),
        ];
        let mut t = trainer(TrainMode::Full, LossWeights::default(), 0.05, 13);
        let cfg = FitConfig {
            epochs: 8,
            batch_size: 2,
            patience: 8,
            checkpoint_path: Some(dir.path().join("best.ck")),
            curves_path: Some(dir.path().join("curves.jsonl")),
            ..FitConfig::default()
        };
        let result = t.fit(&train, &train, &cfg).unwrap();
        let restored = param_bits(&t.engine);

        let mut fresh = Engine::new(branching_graph(), small_config()).unwrap();
        fresh.load_params(&dir.path().join("best.ck")).unwrap();
        assert_eq!(restored, param_bits(&fresh));

        let curves = std::fs::read_to_string(dir.path().join("curves.jsonl")).unwrap();
        assert_eq!(curves.lines().count(), result.epochs_run);
        for line in curves.lines() {
            let rec: EpochRecord = serde_json::from_str(line).unwrap();
            assert!(rec.mean_losses.total.is_finite());
        }
    }

    #[test]
    fn sample_validation_rejects_missing_fields_and_stray_options() {
        let mut s = sample("q ?", &["a"], &["d"]);
        assert!(s.validate().is_ok());
        s.options = Some(vec!["d".to_string(), "e".to_string()]);
        assert!(s.validate().is_ok());
        s.options = Some(vec!["e".to_string()]);
        assert!(s.validate().is_err());
        assert!(sample("", &["a"], &["d"]).validate().is_err());
        assert!(sample("q ?", &[], &["d"]).validate().is_err());
        assert!(sample("q ?", &["a"], &[]).validate().is_err());
    }

    #[test]
    fn train_sample_round_trips_through_json() {
        let s = TrainSample {
            question: "which city ?".to_string(),
            seeds: vec!["a".to_string()],
            answers: vec!["d".to_string()],
            options: None,
            hops: Some(2),
        };
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("options"), "absent options must be omitted: {json}");
        let back: TrainSample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
