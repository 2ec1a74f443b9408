//! Question-complexity assessment: a small classifier over question
//! embeddings that predicts how many reasoning hops a question needs and
//! converts the prediction into a retrieval triple budget of five per hop.
//!
//! The classifier is trained as a separate preprocessing step on questions
//! whose hop labels come from shortest seed-to-answer distances. At
//! inference it can also raise the retrieval depth to at least the predicted
//! hop count.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingProvider;
use crate::error::{CoreError, Result};
use crate::numerics::{
    checkpoint, cross_entropy_loss, init_matrix, init_vector, Adam, AdamConfig, GradMap, NodeId,
    ParamSet, Tape, Tensor,
};
use crate::training::TrainSample;

pub const HIDDEN_W: &str = "hidden_w";
pub const HIDDEN_B: &str = "hidden_b";
pub const OUT_W: &str = "out_w";
pub const OUT_B: &str = "out_b";

/// Triples allotted per predicted hop.
pub const TRIPLES_PER_HOP: usize = 5;

/// Classifier shape and training knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CamConfig {
    /// Largest predictable hop count; classes are 1..=max_hops.
    pub max_hops: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig { max_hops: 4, hidden: 32, epochs: 150, learning_rate: 0.01, seed: 23 }
    }
}

impl CamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hops == 0 {
            return Err(CoreError::config("max_hops must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(CoreError::config("hidden width must be positive"));
        }
        if self.epochs == 0 {
            return Err(CoreError::config("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One classification outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopPrediction {
    /// Predicted hop count, at least 1.
    pub predicted_hops: usize,
    /// `probabilities[k]` is the probability of needing `k + 1` hops;
    /// the entries sum to one.
    pub probabilities: Vec<f64>,
}

impl HopPrediction {
    /// Retrieval triple budget: five triples per predicted hop.
    pub fn budget(&self) -> usize {
        TRIPLES_PER_HOP * self.predicted_hops
    }

    /// Retrieval depth when the classifier drives it: the predicted hop
    /// count, but never below the configured minimum.
    pub fn retrieval_depth(&self, min_layers: usize) -> usize {
        self.predicted_hops.max(min_layers)
    }
}

struct CamNodes {
    hidden_w: NodeId,
    hidden_b: NodeId,
    out_w: NodeId,
    out_b: NodeId,
}

/// The trained classifier.
#[derive(Debug, Clone)]
pub struct CamModel {
    pub config: CamConfig,
    /// Question embedding dimension the model was trained on.
    pub dim: usize,
    pub params: ParamSet,
}

impl CamModel {
    pub fn init(dim: usize, config: CamConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(CoreError::config("embedding dimension must be positive"));
        }
        let mut params = ParamSet::new();
        params.insert(HIDDEN_W, init_matrix(rng, config.hidden, dim, 1.0 / (dim as f64).sqrt()))?;
        params.insert(HIDDEN_B, init_vector(rng, config.hidden, 0.0))?;
        params.insert(
            OUT_W,
            init_matrix(rng, config.max_hops, config.hidden, 1.0 / (config.hidden as f64).sqrt()),
        )?;
        params.insert(OUT_B, init_vector(rng, config.max_hops, 0.0))?;
        Ok(CamModel { config, dim, params })
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<CamNodes> {
        Ok(CamNodes {
            hidden_w: self.params.bind(tape, HIDDEN_W, trainable)?,
            hidden_b: self.params.bind(tape, HIDDEN_B, trainable)?,
            out_w: self.params.bind(tape, OUT_W, trainable)?,
            out_b: self.params.bind(tape, OUT_B, trainable)?,
        })
    }

    fn logits(&self, tape: &mut Tape, nodes: &CamNodes, question: NodeId) -> Result<NodeId> {
        let pre = tape.linear(nodes.hidden_w, question, nodes.hidden_b)?;
        let h = tape.tanh(pre);
        tape.linear(nodes.out_w, h, nodes.out_b)
    }

    /// Classifies one question. Ties in the class probabilities resolve to
    /// the smaller hop count.
    pub fn predict(&self, provider: &EmbeddingProvider, question: &str) -> Result<HopPrediction> {
        let embedding = provider.question_vector(question)?;
        if embedding.len() != self.dim {
            return Err(CoreError::config(format!(
                "question embedding has dimension {}, classifier expects {}",
                embedding.len(),
                self.dim
            )));
        }
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let q = tape.leaf(Tensor::vector(embedding)?);
        let logits = self.logits(&mut tape, &nodes, q)?;
        let probs_node = tape.softmax(logits)?;
        let probabilities = tape.values(probs_node).to_vec();
        let predicted = probabilities
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i + 1)
            .unwrap_or(1);
        Ok(HopPrediction { predicted_hops: predicted, probabilities })
    }

    /// Retrieval triple budget for one question.
    pub fn predict_budget(&self, provider: &EmbeddingProvider, question: &str) -> Result<usize> {
        Ok(self.predict(provider, question)?.budget())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)
    }

    /// Loads a checkpoint written by [`CamModel::save`], validating that its
    /// shapes match the given dimension and configuration.
    pub fn load(path: &Path, dim: usize, config: CamConfig) -> Result<Self> {
        config.validate()?;
        let params = checkpoint::load(path)?;
        let model = CamModel { config, dim, params };
        for (name, rows, cols) in [
            (HIDDEN_W, config.hidden, dim),
            (OUT_W, config.max_hops, config.hidden),
        ] {
            let p = model
                .params
                .get(name)
                .ok_or_else(|| CoreError::Unknown { kind: "parameter", id: name.to_string() })?;
            if p.tensor.len() != rows * cols {
                return Err(CoreError::config(format!(
                    "checkpoint parameter {name} has {} values, configuration expects {rows}x{cols}",
                    p.tensor.len()
                )));
            }
        }
        Ok(model)
    }
}

/// Training summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CamTrainStats {
    pub epochs_run: usize,
    pub train_accuracy: f64,
    /// True when every sample carried the same label.
    pub single_class: bool,
}

/// Trains the hop classifier on labeled questions.
///
/// Every sample must carry a hop label in `1..=max_hops`; the labels are
/// shortest seed-to-answer distances upstream. A dataset with one distinct
/// label trains anyway but warns, since the classifier then degenerates to a
/// constant.
pub fn train_cam(
    provider: &EmbeddingProvider,
    samples: &[TrainSample],
    config: &CamConfig,
) -> Result<(CamModel, CamTrainStats)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(CoreError::config("hop classifier training needs at least one sample"));
    }
    let mut labeled: Vec<(Vec<f64>, usize)> = Vec::with_capacity(samples.len());
    for s in samples {
        let hops = s.hops.ok_or_else(|| {
            CoreError::domain(format!("sample {:?} lacks a hop label", s.question))
        })?;
        if hops == 0 || hops > config.max_hops {
            return Err(CoreError::domain(format!(
                "hop label {hops} of {:?} is outside 1..={}",
                s.question, config.max_hops
            )));
        }
        labeled.push((provider.question_vector(&s.question)?, hops));
    }
    let mut classes: Vec<usize> = labeled.iter().map(|(_, h)| *h).collect();
    classes.sort_unstable();
    classes.dedup();
    let single_class = classes.len() == 1;
    if single_class {
        eprintln!(
            "warning: every training question is labeled {} hops; \
             the classifier will be constant",
            classes[0]
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CamModel::init(labeled[0].0.len(), *config, &mut rng)?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    })?;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (embedding, hops) = &labeled[i];
            let mut tape = Tape::new();
            let nodes = model.bind(&mut tape, true)?;
            let q = tape.leaf(Tensor::vector(embedding.clone())?);
            let logits = model.logits(&mut tape, &nodes, q)?;
            let loss = cross_entropy_loss(&mut tape, logits, hops - 1)?;
            let grads = tape.backward(loss)?;
            let mut gmap = GradMap::new();
            for (name, node) in [
                (HIDDEN_W, nodes.hidden_w),
                (HIDDEN_B, nodes.hidden_b),
                (OUT_W, nodes.out_w),
                (OUT_B, nodes.out_b),
            ] {
                let g = grads
                    .of(node)
                    .map_or_else(|| vec![0.0; tape.values(node).len()], <[f64]>::to_vec);
                gmap.insert(name.to_string(), g);
            }
            adam.step(&mut model.params, &gmap)?;
        }
    }

    let mut correct = 0usize;
    for s in samples {
        let prediction = model.predict(provider, &s.question)?;
        if prediction.predicted_hops == s.hops.unwrap() {
            correct += 1;
        }
    }
    let stats = CamTrainStats {
        epochs_run: config.epochs,
        train_accuracy: correct as f64 / samples.len() as f64,
        single_class,
    };
    Ok((model, stats))
}
