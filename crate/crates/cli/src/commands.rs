//! Implementations of the six subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use sprig_core::cam::{train_cam, CamModel};
use sprig_core::config::{load_config, RunConfig};
use sprig_core::embed::EmbeddingProvider;
use sprig_core::engine::{CandidateSpec, Engine, ForwardKnobs};
use sprig_core::error::{CoreError, Result};
use sprig_core::evalbench::{
    evaluate, f1_score, generate_synthetic, read_dataset_jsonl, time_retrieval_comparison,
    write_dataset_jsonl, AnswerMatch, EvalConfig, EvalReport, LatencyComparison, QuestionRecord,
    SyntheticSpec,
};
use sprig_core::kg::{format_for_path, ingest_triples, KnowledgeGraph};
use sprig_core::retriever::{PruneMode, RetrievalTrace};
use sprig_core::training::{FitConfig, TrainMode, TrainSample, Trainer, TrainerConfig};

use crate::outdir::OutDir;
use crate::{
    AblateArgs, Command, CommonArgs, EvalArgs, GenDataArgs, RetrieveArgs, TrainArgs, TrainCamArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => guarded(&a.common.out.clone(), |out| cmd_gen_data(&a, out)),
        Command::TrainCam(a) => guarded(&a.common.out.clone(), |out| cmd_train_cam(&a, out)),
        Command::Train(a) => guarded(&a.common.out.clone(), |out| cmd_train(&a, out)),
        Command::Retrieve(a) => guarded(&a.common.out.clone(), |out| cmd_retrieve(&a, out)),
        Command::Eval(a) => guarded(&a.common.out.clone(), |out| cmd_eval(&a, out)),
        Command::Ablate(a) => guarded(&a.common.out.clone(), |out| cmd_ablate(&a, out)),
    }
}

fn guarded(root: &Path, f: impl FnOnce(&OutDir) -> Result<()>) -> Result<()> {
    let out = OutDir::create(root)?;
    let result = f(&out);
    if result.is_err() {
        out.cleanup();
    }
    result
}

// ── Config layering ─────────────────────────────────────────────────────────

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.trainer.seed = seed;
        cfg.synthetic.seed = seed;
        cfg.cam.seed = seed;
    }
    Ok(cfg)
}

fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

fn pick_path(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| CoreError::config(format!("no input given; pass {what}")))
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    match s {
        "full" => Ok(TrainMode::Full),
        "feedback_only" => Ok(TrainMode::FeedbackOnly),
        "separate" => Ok(TrainMode::Separate),
        other => Err(CoreError::config(format!(
            "unknown training mode {other:?}; use full, feedback_only, or separate"
        ))),
    }
}

fn parse_match(s: &str) -> Result<AnswerMatch> {
    match s {
        "exact" => Ok(AnswerMatch::Exact),
        "case_fold" => Ok(AnswerMatch::CaseFold),
        other => Err(CoreError::config(format!(
            "unknown match mode {other:?}; use exact or case_fold"
        ))),
    }
}

// ── Shared loading ──────────────────────────────────────────────────────────

fn build_provider(cfg: &RunConfig) -> Result<EmbeddingProvider> {
    match &cfg.paths.embeddings {
        Some(path) => EmbeddingProvider::from_file(path),
        None => EmbeddingProvider::hash_seeded(cfg.engine.dim, cfg.engine.embed_seed),
    }
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let (graph, stats) = ingest_triples(path, format_for_path(path))?;
    if stats.duplicates > 0 {
        eprintln!(
            "warning: ignored {} duplicate triples in {}",
            stats.duplicates,
            path.display()
        );
    }
    Ok(graph)
}

fn build_engine(
    cfg: &RunConfig,
    kg_flag: &Option<PathBuf>,
    checkpoint: Option<&Path>,
) -> Result<Engine> {
    let kg_path = pick_path(kg_flag, &cfg.paths.kg, "--kg or paths.kg")?;
    let graph = load_graph(&kg_path)?;
    let provider = build_provider(cfg)?;
    let mut engine = Engine::with_provider(graph, cfg.engine.clone(), provider)?;
    if let Some(path) = checkpoint {
        engine.load_params(path)?;
    }
    Ok(engine)
}

// ── gen-data ────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct CorpusManifest<'a> {
    spec: &'a SyntheticSpec,
    entities: usize,
    relations: usize,
    triples: usize,
    train: usize,
    dev: usize,
    test: usize,
}

fn cmd_gen_data(args: &GenDataArgs, out: &OutDir) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set(&mut cfg.synthetic.questions, &args.questions);
    set(&mut cfg.synthetic.depth_min, &args.depth_min);
    set(&mut cfg.synthetic.depth_max, &args.depth_max);
    set(&mut cfg.synthetic.branching, &args.branching);
    set(&mut cfg.synthetic.relation_vocab, &args.relation_vocab);
    set(&mut cfg.synthetic.background_entities, &args.background);
    set(&mut cfg.synthetic.multi_answer_fraction, &args.multi_answer_fraction);
    let data = generate_synthetic(&cfg.synthetic)?;
    data.graph.write_tsv(&out.file("graph.tsv"))?;
    write_dataset_jsonl(&out.file("train.jsonl"), &data.train)?;
    write_dataset_jsonl(&out.file("dev.jsonl"), &data.dev)?;
    write_dataset_jsonl(&out.file("test.jsonl"), &data.test)?;
    out.write_json(
        "manifest.json",
        &CorpusManifest {
            spec: &cfg.synthetic,
            entities: data.graph.entity_count(),
            relations: data.graph.relation_count(),
            triples: data.graph.triple_count(),
            train: data.train.len(),
            dev: data.dev.len(),
            test: data.test.len(),
        },
    )?;
    println!(
        "generated {} questions ({}/{}/{} train/dev/test) over {} triples in {}",
        cfg.synthetic.questions,
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        data.graph.triple_count(),
        out.root().display()
    );
    Ok(())
}

// ── train-cam ───────────────────────────────────────────────────────────────

fn cmd_train_cam(args: &TrainCamArgs, out: &OutDir) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set(&mut cfg.cam.max_hops, &args.max_hops);
    set(&mut cfg.cam.epochs, &args.epochs);
    set(&mut cfg.cam.learning_rate, &args.learning_rate);
    let data_path = pick_path(&args.data, &cfg.paths.train, "--data or paths.train")?;
    let samples = read_dataset_jsonl(&data_path)?;
    let provider = build_provider(&cfg)?;
    let (model, stats) = train_cam(&provider, &samples, &cfg.cam)?;
    let ck = out.file("cam.ck");
    model.save(&ck)?;
    out.write_json("cam_stats.json", &stats)?;
    println!(
        "hop classifier: train accuracy {:.3} after {} epochs -> {}",
        stats.train_accuracy,
        stats.epochs_run,
        ck.display()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_hits_at_1: f64,
    best_macro_f1: f64,
    epochs_run: usize,
    skipped_empty_retrievals: usize,
    skipped_nonfinite: usize,
    mode: TrainMode,
    seed: u64,
}

fn cmd_train(args: &TrainArgs, out: &OutDir) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(mode) = &args.mode {
        cfg.trainer.mode = parse_mode(mode)?;
    }
    set(&mut cfg.fit.epochs, &args.epochs);
    set(&mut cfg.fit.batch_size, &args.batch_size);
    set(&mut cfg.fit.patience, &args.patience);
    set(&mut cfg.trainer.adam.learning_rate, &args.learning_rate);
    let train_path = pick_path(&args.train, &cfg.paths.train, "--train or paths.train")?;
    let dev_path = pick_path(&args.dev, &cfg.paths.dev, "--dev or paths.dev")?;
    let train = read_dataset_jsonl(&train_path)?;
    let dev = read_dataset_jsonl(&dev_path)?;
    let engine = build_engine(&cfg, &args.kg, None)?;
    let mut trainer = Trainer::new(engine, cfg.trainer.clone())?;
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.curves_path = Some(out.file("curves.jsonl"));
    let ck = out.file("model.ck");
    fit_cfg.checkpoint_path = Some(ck.clone());
    let result = trainer.fit(&train, &dev, &fit_cfg)?;
    let (skipped_empty, skipped_nonfinite) = trainer.skip_counts();
    out.write_json(
        "fit_result.json",
        &TrainSummary {
            best_epoch: result.best_epoch,
            best_hits_at_1: result.best_hits_at_1,
            best_macro_f1: result.best_macro_f1,
            epochs_run: result.epochs_run,
            skipped_empty_retrievals: skipped_empty,
            skipped_nonfinite,
            mode: cfg.trainer.mode,
            seed: cfg.trainer.seed,
        },
    )?;
    println!(
        "trained {} epochs; best dev hits@1 {:.4} (macro F1 {:.4}) at epoch {}; model -> {}",
        result.epochs_run,
        result.best_hits_at_1,
        result.best_macro_f1,
        result.best_epoch,
        ck.display()
    );
    Ok(())
}

// ── retrieve ────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct TripleOut {
    head: String,
    relation: String,
    tail: String,
    importance: f64,
    mask: f64,
}

#[derive(Serialize)]
struct RankedAnswer {
    answer: String,
    log_prob: f64,
}

#[derive(Serialize)]
struct RetrievalRecord {
    question: String,
    seeds: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_hops: Option<usize>,
    layers: usize,
    budget: usize,
    empty: bool,
    prompt: String,
    subgraph: Vec<TripleOut>,
    answers: Vec<RankedAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<RetrievalTrace>,
    retrieval_seconds: f64,
}

struct Query {
    question: String,
    seeds: Vec<String>,
    options: Option<Vec<String>>,
}

fn cmd_retrieve(args: &RetrieveArgs, out: &OutDir) -> Result<()> {
    let cfg = base_config(&args.common)?;
    let checkpoint = args.checkpoint.clone().or_else(|| cfg.paths.model_checkpoint.clone());
    let engine = build_engine(&cfg, &args.kg, checkpoint.as_deref())?;
    let cam_path = args.cam.clone().or_else(|| cfg.paths.cam_checkpoint.clone());
    let cam = match &cam_path {
        Some(p) => Some(CamModel::load(p, engine.config.dim, cfg.cam.clone())?),
        None => None,
    };

    let queries: Vec<Query> = if let Some(question) = &args.question {
        let seeds: Vec<String> = args
            .seeds
            .as_deref()
            .unwrap_or_default()
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if seeds.is_empty() {
            return Err(CoreError::config("--seeds needs at least one entity name"));
        }
        vec![Query { question: question.clone(), seeds, options: None }]
    } else if let Some(data) = &args.data {
        read_dataset_jsonl(data)?
            .into_iter()
            .map(|s| Query { question: s.question, seeds: s.seeds, options: s.options })
            .collect()
    } else {
        return Err(CoreError::config("pass --question with --seeds, or --data"));
    };

    let mut records = Vec::with_capacity(queries.len());
    for q in &queries {
        let seed_ids = engine.resolve_seeds(&q.seeds)?;
        let prediction = match &cam {
            Some(m) => Some(m.predict(&engine.provider, &q.question)?),
            None => None,
        };
        let mut knobs = ForwardKnobs::inference();
        knobs.layers = args.layers.or_else(|| {
            prediction
                .as_ref()
                .map(|p| p.retrieval_depth(engine.config.retriever.num_layers))
        });
        knobs.budget = args.budget.or_else(|| prediction.as_ref().map(|p| p.budget()));
        let layers = knobs.layers.unwrap_or(engine.config.retriever.num_layers);
        let budget = knobs.budget.unwrap_or(engine.config.subgraph_budget);
        let candidates = match &q.options {
            Some(o) => CandidateSpec::Exactly(o),
            None => CandidateSpec::SubgraphPlus(&[]),
        };
        let record = match engine.forward(&q.question, &seed_ids, candidates, &knobs)? {
            None => {
                eprintln!("warning: retrieval found nothing for {:?}", q.question);
                RetrievalRecord {
                    question: q.question.clone(),
                    seeds: q.seeds.clone(),
                    predicted_hops: prediction.as_ref().map(|p| p.predicted_hops),
                    layers,
                    budget,
                    empty: true,
                    prompt: String::new(),
                    subgraph: Vec::new(),
                    answers: Vec::new(),
                    trace: None,
                    retrieval_seconds: 0.0,
                }
            }
            Some(pass) => {
                let mut subgraph = Vec::with_capacity(pass.subgraph.triples.len());
                for (i, tid) in pass.subgraph.triples.iter().enumerate() {
                    let t = engine.graph.triple(*tid)?;
                    subgraph.push(TripleOut {
                        head: engine.graph.entity_name(t.head)?.to_string(),
                        relation: engine.graph.relation_name(t.relation)?.to_string(),
                        tail: engine.graph.entity_name(t.tail)?.to_string(),
                        importance: pass.subgraph.importance[i],
                        mask: pass.subgraph.mask_values[i],
                    });
                }
                let answers = pass
                    .feedback
                    .ranking
                    .iter()
                    .map(|&i| RankedAnswer {
                        answer: pass.feedback.candidates[i].clone(),
                        log_prob: pass.feedback.values[i],
                    })
                    .collect();
                RetrievalRecord {
                    question: q.question.clone(),
                    seeds: q.seeds.clone(),
                    predicted_hops: prediction.as_ref().map(|p| p.predicted_hops),
                    layers,
                    budget,
                    empty: false,
                    prompt: pass.prompt.text.clone(),
                    subgraph,
                    answers,
                    trace: Some(pass.state.trace(&pass.tape)),
                    retrieval_seconds: pass.retrieval_seconds,
                }
            }
        };
        records.push(record);
    }

    let path = out.write_json("retrievals.json", &records)?;
    if let [record] = records.as_slice() {
        match record.answers.first() {
            Some(top) => println!(
                "top answer: {} (log-prob {:.3}); {} triples retrieved -> {}",
                top.answer,
                top.log_prob,
                record.subgraph.len(),
                path.display()
            ),
            None => println!("retrieval produced no subgraph -> {}", path.display()),
        }
    } else {
        println!("wrote {} retrieval records -> {}", records.len(), path.display());
    }
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct PredictionLine {
    question: String,
    ranked: Vec<String>,
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine =
            serde_json::from_str(line).map_err(|e| CoreError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if map.insert(parsed.question.clone(), parsed.ranked).is_some() {
            return Err(CoreError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("duplicate prediction for question {:?}", parsed.question),
            });
        }
    }
    Ok(map)
}

/// Scores an external prediction file against dataset golds. The first
/// ranked answer drives Hits@1; the whole ranked list is the predicted set
/// for F1.
fn score_predictions(
    path: &Path,
    samples: &[TrainSample],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let map = read_predictions(path)?;
    let mut per_question = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    let mut f1_sum = 0.0;
    let mut tp = 0.0;
    let mut predicted_total = 0usize;
    let mut gold_total = 0usize;
    let mut empty_predictions = 0usize;
    for s in samples {
        let ranked = map
            .get(&s.question)
            .ok_or_else(|| CoreError::Unknown { kind: "prediction", id: s.question.clone() })?;
        let golds: std::collections::BTreeSet<String> =
            s.answers.iter().map(|a| cfg.match_mode.norm(a)).collect();
        let predicted: std::collections::BTreeSet<String> =
            ranked.iter().map(|a| cfg.match_mode.norm(a)).collect();
        let top1 = ranked.first().cloned();
        let correct = match &top1 {
            Some(t) => golds.contains(&cfg.match_mode.norm(t)),
            None => {
                eprintln!("warning: empty prediction for {:?}", s.question);
                empty_predictions += 1;
                false
            }
        };
        let f1 = f1_score(&predicted, &golds);
        hits += usize::from(correct);
        f1_sum += f1;
        tp += predicted.intersection(&golds).count() as f64;
        predicted_total += predicted.len();
        gold_total += golds.len();
        per_question.push(QuestionRecord {
            question: s.question.clone(),
            golds: s.answers.clone(),
            top1,
            predicted: ranked.clone(),
            correct,
            f1,
            retrieval_seconds: 0.0,
            subgraph_triples: 0,
            skipped: false,
        });
    }
    if per_question.is_empty() {
        return Err(CoreError::domain("no questions to score"));
    }
    let n = per_question.len() as f64;
    let pooled = (predicted_total + gold_total) as f64;
    Ok(EvalReport {
        hits_at_1: hits as f64 / n,
        macro_f1: f1_sum / n,
        micro_f1: if pooled == 0.0 { 0.0 } else { 2.0 * tp / pooled },
        mean_retrieval_seconds: 0.0,
        evaluated_questions: per_question.len(),
        skipped_questions: 0,
        empty_predictions,
        per_question,
    })
}

fn cmd_eval(args: &EvalArgs, out: &OutDir) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(m) = &args.match_mode {
        cfg.eval.match_mode = parse_match(m)?;
    }
    if args.record_timing {
        cfg.eval.record_timing = true;
    }
    if args.layers.is_some() {
        cfg.eval.layers = args.layers;
    }
    if args.budget.is_some() {
        cfg.eval.budget = args.budget;
    }
    set(&mut cfg.eval.answer_threshold_ratio, &args.threshold_ratio);
    cfg.eval.validate()?;
    let data_path = args
        .data
        .clone()
        .or_else(|| cfg.paths.test.clone())
        .or_else(|| cfg.paths.dev.clone())
        .ok_or_else(|| CoreError::config("no dataset given; pass --data or paths.test"))?;
    let samples = read_dataset_jsonl(&data_path)?;
    if samples.is_empty() {
        return Err(CoreError::domain(format!("{} holds no samples", data_path.display())));
    }
    let report = match &args.predictions {
        Some(pred) => score_predictions(pred, &samples, &cfg.eval)?,
        None => {
            let checkpoint = args.checkpoint.clone().or_else(|| cfg.paths.model_checkpoint.clone());
            let engine = build_engine(&cfg, &args.kg, checkpoint.as_deref())?;
            evaluate(&engine, &samples, &cfg.eval)?
        }
    };
    let path = out.write_json("eval_report.json", &report)?;
    println!(
        "hits@1 {:.4}  macro F1 {:.4}  micro F1 {:.4}  ({} evaluated, {} skipped) -> {}",
        report.hits_at_1,
        report.macro_f1,
        report.micro_f1,
        report.evaluated_questions,
        report.skipped_questions,
        path.display()
    );
    Ok(())
}

// ── ablate ──────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct AblationRow {
    name: String,
    hits_at_1: f64,
    macro_f1: f64,
    micro_f1: f64,
}

#[derive(Serialize)]
struct AblationReport {
    rows: Vec<AblationRow>,
    latency: LatencyComparison,
    train_questions: usize,
    dev_questions: usize,
    epochs: usize,
    seed: u64,
}

fn train_arm(
    engine: Engine,
    trainer_cfg: TrainerConfig,
    train: &[TrainSample],
    dev: &[TrainSample],
    fit_cfg: &FitConfig,
    checkpoint: PathBuf,
    curves: PathBuf,
) -> Result<Engine> {
    let mut fit_cfg = fit_cfg.clone();
    fit_cfg.checkpoint_path = Some(checkpoint);
    fit_cfg.curves_path = Some(curves);
    let mut trainer = Trainer::new(engine, trainer_cfg)?;
    trainer.fit(train, dev, &fit_cfg)?;
    Ok(trainer.engine)
}

fn run_arms(
    arms: &[(String, Engine)],
    dev: &[TrainSample],
    eval_cfg: &EvalConfig,
    workers: usize,
) -> Result<Vec<EvalReport>> {
    let workers = workers.min(arms.len()).max(1);
    let chunks: Vec<Vec<usize>> =
        (0..workers).map(|w| (w..arms.len()).step_by(workers).collect()).collect();
    let mut collected: Vec<(usize, Result<EvalReport>)> = Vec::with_capacity(arms.len());
    thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::with_capacity(chunks.len());
        for indices in &chunks {
            handles.push(scope.spawn(move || -> Vec<(usize, Result<EvalReport>)> {
                indices.iter().map(|&i| (i, evaluate(&arms[i].1, dev, eval_cfg))).collect()
            }));
        }
        for handle in handles {
            match handle.join() {
                Ok(results) => collected.extend(results),
                Err(_) => return Err(CoreError::numeric("evaluation worker panicked")),
            }
        }
        Ok(())
    })?;
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

fn render_table(rows: &[AblationRow], latency: &LatencyComparison) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<18} {:>8} {:>9} {:>9}\n",
        "arm", "hits@1", "macro F1", "micro F1"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<18} {:>8.4} {:>9.4} {:>9.4}\n",
            r.name, r.hits_at_1, r.macro_f1, r.micro_f1
        ));
    }
    s.push_str(&format!(
        "\nretrieval latency over {} runs: pruned mean {:.6}s p95 {:.6}s | unpruned mean {:.6}s p95 {:.6}s | increase {:+.1}%\n",
        latency.pruned.runs,
        latency.pruned.mean_s,
        latency.pruned.p95_s,
        latency.unpruned.mean_s,
        latency.unpruned.p95_s,
        latency.mean_increase_ratio * 100.0
    ));
    s
}

fn cmd_ablate(args: &AblateArgs, out: &OutDir) -> Result<()> {
    let cfg = base_config(&args.common)?;
    if args.workers == 0 {
        return Err(CoreError::config("--workers must be at least 1"));
    }
    if args.reps == 0 {
        return Err(CoreError::config("--reps must be at least 1"));
    }
    let mut fit_cfg = cfg.fit.clone();
    set(&mut fit_cfg.epochs, &args.epochs);

    let (graph, train, dev) = match (&args.kg, &args.train, &args.dev) {
        (Some(kg), Some(train), Some(dev)) => {
            (load_graph(kg)?, read_dataset_jsonl(train)?, read_dataset_jsonl(dev)?)
        }
        _ => {
            let data = generate_synthetic(&cfg.synthetic)?;
            data.graph.write_tsv(&out.file("graph.tsv"))?;
            write_dataset_jsonl(&out.file("train.jsonl"), &data.train)?;
            write_dataset_jsonl(&out.file("dev.jsonl"), &data.dev)?;
            (data.graph, data.train, data.dev)
        }
    };

    let provider = build_provider(&cfg)?;
    let engine = Engine::with_provider(graph, cfg.engine.clone(), provider)?;
    let mut full_cfg = cfg.trainer.clone();
    full_cfg.mode = TrainMode::Full;
    let mut sep_cfg = cfg.trainer.clone();
    sep_cfg.mode = TrainMode::Separate;

    println!("training full model ({} epochs)...", fit_cfg.epochs);
    let full_engine = train_arm(
        engine.clone(),
        full_cfg,
        &train,
        &dev,
        &fit_cfg,
        out.file("full_model.ck"),
        out.file("full_curves.jsonl"),
    )?;
    println!("training separate model ({} epochs)...", fit_cfg.epochs);
    let sep_engine = train_arm(
        engine,
        sep_cfg,
        &train,
        &dev,
        &fit_cfg,
        out.file("separate_model.ck"),
        out.file("separate_curves.jsonl"),
    )?;

    let mut arms: Vec<(String, Engine)> = Vec::new();
    arms.push(("full".into(), full_engine.clone()));
    arms.push(("separate".into(), sep_engine));
    for sigma in [0.1, 0.2, 0.5] {
        let mut e = full_engine.clone();
        e.config.retriever.prune_mode = PruneMode::Threshold;
        e.config.retriever.sigma = sigma;
        arms.push((format!("sigma {sigma}"), e));
    }
    for k in [5usize, 10, 20] {
        let mut e = full_engine.clone();
        e.config.retriever.prune_mode = PruneMode::TopK { k };
        arms.push((format!("top-k {k}"), e));
    }
    {
        let mut e = full_engine.clone();
        e.config.retriever.prune_mode = PruneMode::Disabled;
        arms.push(("no pruning".into(), e));
    }
    {
        let mut e = full_engine.clone();
        e.config.retriever.entity_update = false;
        arms.push(("no entity update".into(), e));
    }

    println!("evaluating {} arms with {} workers...", arms.len(), args.workers);
    let reports = run_arms(&arms, &dev, &cfg.eval, args.workers)?;
    println!("timing pruned vs unpruned retrieval...");
    let latency = time_retrieval_comparison(&full_engine, &dev, args.warmup, args.reps)?;

    let rows: Vec<AblationRow> = arms
        .iter()
        .zip(&reports)
        .map(|((name, _), r)| AblationRow {
            name: name.clone(),
            hits_at_1: r.hits_at_1,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
        })
        .collect();
    let table = render_table(&rows, &latency);
    out.write_json(
        "ablation.json",
        &AblationReport {
            rows,
            latency,
            train_questions: train.len(),
            dev_questions: dev.len(),
            epochs: fit_cfg.epochs,
            seed: cfg.trainer.seed,
        },
    )?;
    out.write_text("ablation.txt", &table)?;
    print!("{table}");
    Ok(())
}
