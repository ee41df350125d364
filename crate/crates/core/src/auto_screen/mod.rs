//! Automated screening: supervised classifiers trained on the reviewers'
//! include/exclude decisions, and prompt-based question answering.

pub mod hash_linear;
pub mod logreg;
pub mod prompt;
pub mod qa;
pub mod tfidf;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::{MainDecision, PaperId, PaperRecord};
use crate::error::{Error, Result};
use crate::persistence::LoggedDecision;
use crate::screening::current_manual;

use hash_linear::{HashLinearConfig, HashLinearParams};
use logreg::LogRegConfig;
use tfidf::TfidfVectorizer;

pub use prompt::build_prompt;
pub use qa::{parse_answer, QaAnswer, QaBatch, QaClient, QaFailure, QaPrediction, HALLUCINATION_WARNING};

/// Minimum number of included and of excluded examples before training.
pub const MIN_PER_CLASS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    TfidfLogreg,
    HashLinear,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::TfidfLogreg => "tfidf_logreg",
            ClassifierKind::HashLinear => "hash_linear",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf_logreg" => Ok(ClassifierKind::TfidfLogreg),
            "hash_linear" => Ok(ClassifierKind::HashLinear),
            other => Err(Error::validation("kind", format!("unknown classifier kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub paper_id: PaperId,
    pub text: String,
    /// 1 include, 0 exclude.
    pub label: u8,
}

/// Labeled examples that passed the minimum-per-class gate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    examples: Vec<TrainingExample>,
    included: usize,
    excluded: usize,
}

impl TrainingSet {
    pub fn new(examples: Vec<TrainingExample>) -> Result<Self> {
        let included = examples.iter().filter(|e| e.label == 1).count();
        let excluded = examples.len() - included;
        if included < MIN_PER_CLASS || excluded < MIN_PER_CLASS {
            return Err(Error::InsufficientTrainingData { included, excluded });
        }
        Ok(TrainingSet { examples, included, excluded })
    }

    pub fn examples(&self) -> &[TrainingExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn included(&self) -> usize {
        self.included
    }

    pub fn excluded(&self) -> usize {
        self.excluded
    }

    fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Labeled examples from the latest manual decision on each paper (seed
/// labels included): include is 1, exclude is 0, maybe and undecided papers
/// are left out. Papers are taken in corpus order.
pub fn build_training_set(papers: &[PaperRecord], log: &[LoggedDecision]) -> Result<TrainingSet> {
    let current = current_manual(log);
    let examples = papers
        .iter()
        .filter_map(|p| {
            let label = match current.get(&p.id)?.main {
                MainDecision::Include => 1,
                MainDecision::Exclude => 0,
                MainDecision::Maybe => return None,
            };
            Some(TrainingExample { paper_id: p.id.clone(), text: p.screening_text(), label })
        })
        .collect();
    TrainingSet::new(examples)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default)]
    pub hash_linear: HashLinearConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VectorizerConfig {
    Tfidf(TfidfVectorizer),
    Hashed(HashLinearConfig),
}

impl VectorizerConfig {
    pub fn dimensionality(&self) -> usize {
        match self {
            VectorizerConfig::Tfidf(v) => v.dim(),
            VectorizerConfig::Hashed(c) => c.dimensionality(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub included_count: usize,
    pub excluded_count: usize,
    pub trained_at: DateTime<Utc>,
}

/// A fitted linear model with the vectorizer it was trained with.
///
/// For the hashed model, `weights` holds the embedding table followed by the
/// output layer. Serialized, the hashed model stores only rows that moved
/// away from their seeded initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StoredClassifier", try_from = "StoredClassifier")]
pub struct TrainedClassifier {
    pub kind: ClassifierKind,
    pub config: VectorizerConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_on: TrainingProvenance,
    pub version: u64,
}

impl TrainedClassifier {
    pub fn train(
        kind: ClassifierKind,
        set: &TrainingSet,
        settings: &ClassifierSettings,
        version: u64,
        trained_at: DateTime<Utc>,
    ) -> Result<Self> {
        let texts: Vec<&str> = set.examples.iter().map(|e| e.text.as_str()).collect();
        let labels = set.labels();
        let (config, weights, bias) = match kind {
            ClassifierKind::TfidfLogreg => {
                let (vectorizer, rows) = TfidfVectorizer::fit_transform(&texts)
                    .expect("training sets are never empty");
                let fit = logreg::train(&rows, &labels, vectorizer.dim(), &settings.logreg)?;
                (VectorizerConfig::Tfidf(vectorizer), fit.weights, fit.bias)
            }
            ClassifierKind::HashLinear => {
                let cfg = settings.hash_linear;
                let docs: Vec<Vec<u32>> =
                    texts.iter().map(|t| hash_linear::hash_features(t, cfg.buckets)).collect();
                let params = hash_linear::train(&docs, &labels, &cfg)?;
                (VectorizerConfig::Hashed(cfg), params.weights, params.bias)
            }
        };
        let model = TrainedClassifier {
            kind,
            config,
            weights,
            bias,
            trained_on: TrainingProvenance {
                included_count: set.included,
                excluded_count: set.excluded,
                trained_at,
            },
            version,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.trained_on.included_count < MIN_PER_CLASS || self.trained_on.excluded_count < MIN_PER_CLASS {
            return Err(Error::InsufficientTrainingData {
                included: self.trained_on.included_count,
                excluded: self.trained_on.excluded_count,
            });
        }
        let expected = self.config.dimensionality();
        if self.weights.len() != expected {
            return Err(Error::validation(
                "weights",
                format!("expected {expected} weights, found {}", self.weights.len()),
            ));
        }
        let kind_matches = matches!(
            (self.kind, &self.config),
            (ClassifierKind::TfidfLogreg, VectorizerConfig::Tfidf(_))
                | (ClassifierKind::HashLinear, VectorizerConfig::Hashed(_))
        );
        if !kind_matches {
            return Err(Error::validation("config", "vectorizer does not match classifier kind"));
        }
        Ok(())
    }

    /// `kind@vN`, the tag attached to this model's decisions.
    pub fn model_tag(&self) -> String {
        format!("{}@v{}", self.kind, self.version)
    }

    /// Probability that `text` should be included.
    pub fn probability(&self, text: &str) -> f64 {
        match &self.config {
            VectorizerConfig::Tfidf(v) => logreg::sigmoid(v.transform(text).dot(&self.weights) + self.bias),
            VectorizerConfig::Hashed(cfg) => {
                let features = hash_linear::hash_features(text, cfg.buckets);
                let params = HashLinearView { weights: &self.weights, bias: self.bias };
                params.probability(&features, cfg.dim)
            }
        }
    }
}

struct HashLinearView<'a> {
    weights: &'a [f64],
    bias: f64,
}

impl HashLinearView<'_> {
    fn probability(&self, features: &[u32], dim: usize) -> f64 {
        if features.is_empty() {
            return logreg::sigmoid(self.bias);
        }
        let off = self.weights.len() - dim;
        let mut h = vec![0.0; dim];
        for &f in features {
            for (acc, v) in h.iter_mut().zip(&self.weights[f as usize * dim..(f as usize + 1) * dim]) {
                *acc += v;
            }
        }
        let n = features.len() as f64;
        let z: f64 = h.iter().zip(&self.weights[off..]).map(|(a, b)| a / n * b).sum();
        logreg::sigmoid(z + self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub paper_id: PaperId,
    pub probability: f64,
    pub include: bool,
}

/// Scores each paper; a probability of exactly 0.5 counts as include.
pub fn predict(model: &TrainedClassifier, papers: &[PaperRecord]) -> Vec<Prediction> {
    papers
        .iter()
        .map(|p| {
            let probability = model.probability(&p.screening_text());
            Prediction { paper_id: p.id.clone(), probability, include: probability >= 0.5 }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
enum StoredWeights {
    Dense { weights: Vec<f64> },
    /// Embedding rows that differ from their seeded initialization, plus the
    /// output layer.
    SeededDelta { rows: Vec<(u32, Vec<f64>)>, output: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredClassifier {
    kind: ClassifierKind,
    config: VectorizerConfig,
    weights: StoredWeights,
    bias: f64,
    trained_on: TrainingProvenance,
    version: u64,
}

impl From<TrainedClassifier> for StoredClassifier {
    fn from(m: TrainedClassifier) -> Self {
        let weights = match &m.config {
            VectorizerConfig::Tfidf(_) => StoredWeights::Dense { weights: m.weights },
            VectorizerConfig::Hashed(cfg) => {
                let dim = cfg.dim;
                let n_emb = cfg.buckets as usize * dim;
                let mut rows = Vec::new();
                for (r, row) in m.weights[..n_emb].chunks(dim).enumerate() {
                    let moved = row
                        .iter()
                        .enumerate()
                        .any(|(k, v)| v.to_bits() != hash_linear::initial_weight(cfg.seed, r * dim + k, cfg.init_range).to_bits());
                    if moved {
                        rows.push((r as u32, row.to_vec()));
                    }
                }
                StoredWeights::SeededDelta { rows, output: m.weights[n_emb..].to_vec() }
            }
        };
        StoredClassifier {
            kind: m.kind,
            config: m.config,
            weights,
            bias: m.bias,
            trained_on: m.trained_on,
            version: m.version,
        }
    }
}

impl TryFrom<StoredClassifier> for TrainedClassifier {
    type Error = Error;

    fn try_from(s: StoredClassifier) -> Result<Self> {
        let weights = match (s.weights, &s.config) {
            (StoredWeights::Dense { weights }, _) => weights,
            (StoredWeights::SeededDelta { rows, output }, VectorizerConfig::Hashed(cfg)) => {
                let mut params = HashLinearParams::initial(cfg).weights;
                let dim = cfg.dim;
                let n_emb = cfg.buckets as usize * dim;
                for (r, row) in rows {
                    let start = r as usize * dim;
                    if row.len() != dim || start + dim > n_emb {
                        return Err(Error::validation("weights", format!("bad embedding row {r}")));
                    }
                    params[start..start + dim].copy_from_slice(&row);
                }
                if output.len() != dim {
                    return Err(Error::validation("weights", "bad output layer size"));
                }
                params[n_emb..].copy_from_slice(&output);
                params
            }
            (StoredWeights::SeededDelta { .. }, VectorizerConfig::Tfidf(_)) => {
                return Err(Error::validation("weights", "delta encoding requires a hashed model"));
            }
        };
        let model = TrainedClassifier {
            kind: s.kind,
            config: s.config,
            weights,
            bias: s.bias,
            trained_on: s.trained_on,
            version: s.version,
        };
        model.check()?;
        Ok(model)
    }
}
