//! Evaluation metrics, synthetic corpus generation, and retrieval timing.
//!
//! Evaluation runs the frozen pipeline with neutral mask noise, so two runs
//! over the same engine and data produce identical reports (timing is zeroed
//! unless explicitly recorded). The synthetic generator builds labeled
//! multi-hop questions whose gold answers sit a known number of hops from
//! the seed, with relation names that separate signal chains from
//! distractors and a disconnected background component for cost checks.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{CandidateSpec, Engine, ForwardKnobs};
use crate::error::{CoreError, Result};
use crate::kg::KnowledgeGraph;
use crate::retriever::NoisePlan;
use crate::training::TrainSample;

/// How predicted answer strings are compared with gold answer strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMatch {
    #[default]
    Exact,
    CaseFold,
}

impl AnswerMatch {
    /// Canonical form of an answer string under this match mode.
    pub fn norm(&self, s: &str) -> String {
        match self {
            AnswerMatch::Exact => s.to_string(),
            AnswerMatch::CaseFold => s.to_lowercase(),
        }
    }
}

/// Evaluation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Retrieval depth override; `None` uses the engine configuration.
    pub layers: Option<usize>,
    /// Subgraph budget override; `None` uses the engine configuration.
    pub budget: Option<usize>,
    pub match_mode: AnswerMatch,
    /// A candidate joins the predicted set when its probability is at least
    /// this fraction of the top candidate's probability.
    pub answer_threshold_ratio: f64,
    /// Keep wall-clock retrieval times in the report. Off by default so
    /// reports are bit-identical across runs.
    pub record_timing: bool,
    pub use_graph_token: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            layers: None,
            budget: None,
            match_mode: AnswerMatch::Exact,
            answer_threshold_ratio: 0.5,
            record_timing: false,
            use_graph_token: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.answer_threshold_ratio > 0.0 && self.answer_threshold_ratio <= 1.0) {
            return Err(CoreError::config(format!(
                "answer_threshold_ratio must lie in (0, 1], got {}",
                self.answer_threshold_ratio
            )));
        }
        Ok(())
    }
}

/// Per-question evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: String,
    pub golds: Vec<String>,
    pub top1: Option<String>,
    pub predicted: Vec<String>,
    pub correct: bool,
    pub f1: f64,
    pub retrieval_seconds: f64,
    pub subgraph_triples: usize,
    /// True when the question was excluded (seeds missing from the graph).
    pub skipped: bool,
}

/// Aggregated evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of evaluated questions whose top candidate is a gold answer.
    pub hits_at_1: f64,
    /// Mean of per-question F1 scores.
    pub macro_f1: f64,
    /// F1 over globally pooled prediction and gold counts.
    pub micro_f1: f64,
    pub mean_retrieval_seconds: f64,
    pub evaluated_questions: usize,
    pub skipped_questions: usize,
    /// Questions where retrieval produced nothing; they count as wrong.
    pub empty_predictions: usize,
    pub per_question: Vec<QuestionRecord>,
}

/// Set-overlap F1 between a predicted and a gold answer set.
pub fn f1_score(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let tp = predicted.intersection(gold).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / predicted.len() as f64;
    let r = tp / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Fraction of questions whose rank-1 prediction is a gold answer. An empty
/// ranking counts as incorrect with a warning.
pub fn hits_at_1(ranked: &[Vec<String>], golds: &[BTreeSet<String>], mode: AnswerMatch) -> Result<f64> {
    if ranked.len() != golds.len() {
        return Err(CoreError::domain(format!(
            "{} ranked lists vs {} gold sets",
            ranked.len(),
            golds.len()
        )));
    }
    if ranked.is_empty() {
        return Err(CoreError::domain("hits@1 over zero questions"));
    }
    let mut hits = 0usize;
    for (i, (r, g)) in ranked.iter().zip(golds).enumerate() {
        match r.first() {
            None => eprintln!("warning: question {i} has no predictions; counted incorrect"),
            Some(top) => {
                if g.iter().any(|a| mode.norm(a) == mode.norm(top)) {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / ranked.len() as f64)
}

/// Scores every sample with the frozen pipeline.
///
/// Questions whose seed entities are missing from the graph are skipped with
/// a warning and excluded from the aggregates. Questions where retrieval
/// yields nothing stay in the denominator as incorrect, empty predictions.
pub fn evaluate(engine: &Engine, samples: &[TrainSample], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let knobs = ForwardKnobs {
        trainable_retriever: false,
        trainable_bridge: false,
        trainable_reasoner: false,
        include_graph_token: cfg.use_graph_token,
        noise: NoisePlan::Fixed(0.5),
        layers: cfg.layers,
        budget: cfg.budget,
    };
    let mut per_question = Vec::with_capacity(samples.len());
    let mut skipped = 0usize;
    let mut empty = 0usize;
    let mut hits = 0usize;
    let mut macro_sum = 0.0;
    let mut pooled_tp = 0.0;
    let mut pooled_pred = 0usize;
    let mut pooled_gold = 0usize;

    for sample in samples {
        sample.validate()?;
        let golds: BTreeSet<String> =
            sample.answers.iter().map(|a| cfg.match_mode.norm(a)).collect();
        let seeds = match engine.resolve_seeds(&sample.seeds) {
            Ok(ids) => ids,
            Err(CoreError::Unknown { .. }) => {
                eprintln!(
                    "warning: skipping {:?}: seed entity not in the graph",
                    sample.question
                );
                skipped += 1;
                per_question.push(QuestionRecord {
                    question: sample.question.clone(),
                    golds: sample.answers.clone(),
                    top1: None,
                    predicted: Vec::new(),
                    correct: false,
                    f1: 0.0,
                    retrieval_seconds: 0.0,
                    subgraph_triples: 0,
                    skipped: true,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let spec = match &sample.options {
            Some(options) => CandidateSpec::Exactly(options),
            None => CandidateSpec::SubgraphPlus(&[]),
        };
        let pass = engine.forward(&sample.question, &seeds, spec, &knobs)?;
        pooled_gold += golds.len();
        let Some(pass) = pass else {
            eprintln!(
                "warning: {:?} produced no predictions (empty retrieval); counted incorrect",
                sample.question
            );
            empty += 1;
            per_question.push(QuestionRecord {
                question: sample.question.clone(),
                golds: sample.answers.clone(),
                top1: None,
                predicted: Vec::new(),
                correct: false,
                f1: 0.0,
                retrieval_seconds: 0.0,
                subgraph_triples: 0,
                skipped: false,
            });
            continue;
        };
        let probs: Vec<f64> = pass.feedback.values.iter().map(|v| v.exp()).collect();
        let p_top = pass.feedback.ranking.first().map_or(0.0, |&i| probs[i]);
        let floor = cfg.answer_threshold_ratio * p_top;
        let predicted: Vec<String> = pass
            .feedback
            .ranking
            .iter()
            .filter(|&&i| probs[i] >= floor)
            .map(|&i| pass.candidates[i].clone())
            .collect();
        let predicted_set: BTreeSet<String> =
            predicted.iter().map(|p| cfg.match_mode.norm(p)).collect();
        let top1 = pass.feedback.top1().to_string();
        let correct = golds.contains(&cfg.match_mode.norm(&top1));
        let f1 = f1_score(&predicted_set, &golds);
        if correct {
            hits += 1;
        }
        macro_sum += f1;
        pooled_tp += predicted_set.intersection(&golds).count() as f64;
        pooled_pred += predicted_set.len();
        let seconds = if cfg.record_timing { pass.retrieval_seconds } else { 0.0 };
        per_question.push(QuestionRecord {
            question: sample.question.clone(),
            golds: sample.answers.clone(),
            top1: Some(top1),
            predicted,
            correct,
            f1,
            retrieval_seconds: seconds,
            subgraph_triples: pass.subgraph.len(),
            skipped: false,
        });
    }

    let evaluated = samples.len() - skipped;
    let denom = evaluated.max(1) as f64;
    let time_sum: f64 =
        per_question.iter().filter(|r| !r.skipped).map(|r| r.retrieval_seconds).sum();
    Ok(EvalReport {
        hits_at_1: hits as f64 / denom,
        macro_f1: macro_sum / denom,
        micro_f1: if pooled_tp == 0.0 {
            0.0
        } else {
            2.0 * pooled_tp / (pooled_pred + pooled_gold) as f64
        },
        mean_retrieval_seconds: time_sum / denom,
        evaluated_questions: evaluated,
        skipped_questions: skipped,
        empty_predictions: empty,
        per_question,
    })
}

// ── Synthetic corpus ─────────────────────────────────────────────────────────

/// Answer-type vocabulary; the question names the type and exactly one
/// reachable entity carries it.
const TYPES: [&str; 6] = ["city", "river", "person", "animal", "metal", "song"];

/// Synthetic corpus shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub questions: usize,
    /// Minimum gold path length in hops.
    pub depth_min: usize,
    /// Maximum gold path length in hops.
    pub depth_max: usize,
    /// Distractor edges attached to every chain node.
    pub branching: usize,
    /// Total relation-name vocabulary, split between per-hop signal pools
    /// and distractor relations.
    pub relation_vocab: usize,
    /// Entities in the disconnected background ring.
    pub background_entities: usize,
    /// Fraction of questions with a second gold answer.
    pub multi_answer_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            questions: 200,
            depth_min: 1,
            depth_max: 3,
            branching: 3,
            relation_vocab: 12,
            background_entities: 30,
            multi_answer_fraction: 0.2,
            seed: 29,
        }
    }
}

impl SyntheticSpec {
    fn noise_relations(&self) -> usize {
        (self.relation_vocab / 4).max(1)
    }

    fn signal_pool_size(&self) -> usize {
        (self.relation_vocab.saturating_sub(self.noise_relations())) / self.depth_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions < 3 {
            return Err(CoreError::config("need at least 3 questions to split the corpus"));
        }
        if self.depth_min == 0 || self.depth_min > self.depth_max {
            return Err(CoreError::config(format!(
                "depth range [{}, {}] is invalid",
                self.depth_min, self.depth_max
            )));
        }
        if self.signal_pool_size() == 0 {
            return Err(CoreError::config(format!(
                "relation_vocab {} is too small for depth_max {}: each hop needs \
                 its own signal relation after reserving {} distractor relations",
                self.relation_vocab,
                self.depth_max,
                self.noise_relations()
            )));
        }
        if !(0.0..=1.0).contains(&self.multi_answer_fraction) {
            return Err(CoreError::config("multi_answer_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A generated corpus: one shared graph and three question splits.
#[derive(Debug)]
pub struct SyntheticData {
    pub graph: KnowledgeGraph,
    pub train: Vec<TrainSample>,
    pub dev: Vec<TrainSample>,
    pub test: Vec<TrainSample>,
}

impl SyntheticData {
    pub fn all_samples(&self) -> impl Iterator<Item = &TrainSample> {
        self.train.iter().chain(self.dev.iter()).chain(self.test.iter())
    }
}

/// Builds a deterministic labeled corpus.
///
/// Each question gets a private gadget: a signal chain of `hops` edges from
/// its seed to a typed answer entity, noise-relation distractor edges on
/// every chain node (each distractor target continuing one hop further), and
/// optionally a second answer sharing the final relation. The question text
/// names the answer type and the hop count. A background ring shares no
/// entity with any gadget. The gold depth of every answer is verified by
/// breadth-first search before returning.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_count = spec.noise_relations();
    let pool = spec.signal_pool_size();
    let noise_names: Vec<String> = (0..noise_count).map(|j| format!("noise rel{j}")).collect();
    let mut triples: Vec<(String, String, String)> = Vec::new();
    let mut samples: Vec<TrainSample> = Vec::new();

    for i in 0..spec.questions {
        let hops = rng.gen_range(spec.depth_min..=spec.depth_max);
        let ty_idx = rng.gen_range(0..TYPES.len());
        let ty = TYPES[ty_idx];
        let seed_name = format!("seed q{i}");
        let mut chain = vec![seed_name.clone()];
        for k in 0..hops.saturating_sub(1) {
            chain.push(format!("mid{k} q{i}"));
        }
        let answer = format!("{ty} q{i} a0");
        let mut answers = vec![answer.clone()];
        let mut hop_relations = Vec::new();
        for k in 0..hops {
            let rel = format!("sig hop{k} r{}", rng.gen_range(0..pool));
            hop_relations.push(rel.clone());
            let target = if k + 1 == hops { answer.clone() } else { chain[k + 1].clone() };
            triples.push((chain[k].clone(), rel, target));
        }
        if rng.gen_bool(spec.multi_answer_fraction) {
            let second = format!("{ty} q{i} a1");
            triples.push((chain[hops - 1].clone(), hop_relations[hops - 1].clone(), second.clone()));
            answers.push(second);
        }
        for (k, node) in chain.iter().enumerate() {
            for b in 0..spec.branching {
                let wrong = TYPES[(ty_idx + 1 + b % (TYPES.len() - 1)) % TYPES.len()];
                let target = format!("{wrong} q{i} d{k}b{b}");
                let rel = noise_names[rng.gen_range(0..noise_count)].clone();
                triples.push((node.clone(), rel, target.clone()));
                if k + 1 < hops {
                    let onward = format!("{wrong} q{i} d{k}b{b}x");
                    let rel2 = noise_names[rng.gen_range(0..noise_count)].clone();
                    triples.push((target, rel2, onward));
                }
            }
        }
        samples.push(TrainSample {
            question: format!(
                "which {ty} lies {hops} hops from seed q{i} via {} ?",
                hop_relations.join(" then ")
            ),
            seeds: vec![seed_name],
            answers,
            options: None,
            hops: Some(hops),
        });
    }

    for j in 0..spec.background_entities {
        let rel = noise_names[j % noise_count].clone();
        triples.push((
            format!("bg n{j}"),
            rel,
            format!("bg n{}", (j + 1) % spec.background_entities),
        ));
    }

    let (graph, _) = KnowledgeGraph::from_names(
        triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
    );

    for s in &samples {
        let seed = graph
            .entity_id(&s.seeds[0])
            .ok_or_else(|| CoreError::Unknown { kind: "entity", id: s.seeds[0].clone() })?;
        let dist = graph.bfs_distances(&[seed])?;
        for a in &s.answers {
            let aid = graph
                .entity_id(a)
                .ok_or_else(|| CoreError::Unknown { kind: "entity", id: a.clone() })?;
            if dist[aid.index()] != Some(s.hops.unwrap() as u32) {
                return Err(CoreError::numeric(format!(
                    "generator self-check failed: {a:?} is at depth {:?}, labeled {}",
                    dist[aid.index()],
                    s.hops.unwrap()
                )));
            }
        }
    }

    samples.shuffle(&mut rng);
    let n_dev = (samples.len() / 10).max(1);
    let n_test = (samples.len() / 10).max(1);
    let n_train = samples.len() - n_dev - n_test;
    let test = samples.split_off(n_train + n_dev);
    let dev = samples.split_off(n_train);
    Ok(SyntheticData { graph, train: samples, dev, test })
}

/// Writes one JSON object per line: question, seeds, answers, and depth.
pub fn write_dataset_jsonl(path: &Path, samples: &[TrainSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s)
            .map_err(|e| CoreError::numeric(format!("sample serialisation: {e}")))?;
        writeln!(w, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset_jsonl`].
pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<TrainSample>> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrainSample = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

// ── Retrieval timing ─────────────────────────────────────────────────────────

/// Per-query wall-clock statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    /// Number of measured retrievals (samples times repetitions).
    pub runs: usize,
}

fn summarize(times: &[f64]) -> LatencyStats {
    let n = times.len();
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    LatencyStats {
        mean_s: times.iter().sum::<f64>() / n as f64,
        median_s: sorted[(n - 1) / 2],
        p95_s: sorted[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1],
        runs: n,
    }
}

/// Times retrieval per query.
///
/// Every sample is retrieved once per sweep; `warmup` sweeps are discarded,
/// then `reps` sweeps contribute one measurement per query. Questions with
/// unresolvable seeds are an error here: a timing corpus must be fully
/// runnable. Runs sequentially so measurements never contend.
pub fn time_retrieval(
    engine: &Engine,
    samples: &[TrainSample],
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(CoreError::config("timing needs at least one sample"));
    }
    if reps == 0 {
        return Err(CoreError::config("timing needs at least one measured repetition"));
    }
    let resolved: Vec<Vec<crate::kg::EntityId>> = samples
        .iter()
        .map(|s| engine.resolve_seeds(&s.seeds))
        .collect::<Result<_>>()?;
    let sweep = |record: Option<&mut Vec<f64>>| -> Result<()> {
        let mut per_query = Vec::with_capacity(samples.len());
        for (s, seeds) in samples.iter().zip(&resolved) {
            let (_, seconds) = engine.retrieve_only(&s.question, seeds, None)?;
            per_query.push(seconds);
        }
        if let Some(times) = record {
            times.extend(per_query);
        }
        Ok(())
    };
    for _ in 0..warmup {
        sweep(None)?;
    }
    let mut times = Vec::with_capacity(reps * samples.len());
    for _ in 0..reps {
        sweep(Some(&mut times))?;
    }
    Ok(summarize(&times))
}

/// Latency with pruning on versus off, on the same engine parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyComparison {
    pub pruned: LatencyStats,
    pub unpruned: LatencyStats,
    /// `unpruned.mean_s / pruned.mean_s - 1`, the relative mean increase.
    pub mean_increase_ratio: f64,
}

/// Times the engine as configured, then again with pruning disabled.
pub fn time_retrieval_comparison(
    engine: &Engine,
    samples: &[TrainSample],
    warmup: usize,
    reps: usize,
) -> Result<LatencyComparison> {
    let pruned = time_retrieval(engine, samples, warmup, reps)?;
    let mut unpruned_engine = engine.clone();
    unpruned_engine.config.retriever.prune_mode = crate::retriever::PruneMode::Disabled;
    let unpruned = time_retrieval(&unpruned_engine, samples, warmup, reps)?;
    Ok(LatencyComparison {
        mean_increase_ratio: unpruned.mean_s / pruned.mean_s - 1.0,
        pruned,
        unpruned,
    })
}
