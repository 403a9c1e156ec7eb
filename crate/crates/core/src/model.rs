//! Shared domain types: the frozen classifier head, ingested samples,
//! hyperparameters and posteriors.
//!
//! Every vector that enters the engine goes through [`normalize`] exactly
//! once, so cosine similarity reduces to a dot product and the Gaussian
//! estimator sees the same representation as the zero-shot head.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};

/// Returns `v / ‖v‖₂`. Zero or non-finite input is rejected.
pub fn normalize(v: &[f64]) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Err(DotaError::Ingestion("empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(DotaError::Ingestion(format!("non-finite value at position {i}")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(DotaError::Ingestion(format!("cannot normalize vector with norm {norm}")));
    }
    Ok(DVector::from_iterator(v.len(), v.iter().map(|x| x / norm)))
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The frozen zero-shot head: class names, unit-norm weights and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    class_names: Vec<String>,
    weights: Vec<DVector<f64>>,
    temperature: f64,
}

impl ClassifierSpec {
    /// Validates and ingests a classifier. Weights are L2-normalized here.
    pub fn new(class_names: Vec<String>, weights: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(DotaError::Ingestion(format!(
                "classifier needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if class_names.len() != weights.len() {
            return Err(DotaError::Ingestion(format!(
                "{} class names but {} weight vectors",
                class_names.len(),
                weights.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(DotaError::Ingestion("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DotaError::Ingestion(format!("duplicate class name {name:?}")));
            }
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(DotaError::Ingestion(format!("temperature must be > 0, got {temperature}")));
        }
        let dim = weights[0].len();
        let mut unit = Vec::with_capacity(weights.len());
        for w in &weights {
            if w.len() != dim {
                return Err(DotaError::Dimension { expected: dim, got: w.len() });
            }
            unit.push(normalize(w)?);
        }
        Ok(Self { class_names, weights: unit, temperature })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn weights(&self) -> &[DVector<f64>] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> &DVector<f64> {
        &self.weights[k]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// One ingested test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    /// Unit-norm embedding.
    pub embedding: DVector<f64>,
    pub true_label: Option<usize>,
    /// Display-only reference (image path or URL).
    pub asset_uri: Option<String>,
}

impl EmbeddingRecord {
    pub fn new(
        id: impl Into<String>,
        raw: &[f64],
        true_label: Option<usize>,
        asset_uri: Option<String>,
    ) -> Result<Self> {
        Ok(Self { id: id.into(), embedding: normalize(raw)?, true_label, asset_uri })
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovBackend {
    /// One covariance matrix per class, averaged (unweighted) before inversion.
    #[default]
    PerClass,
    /// A single accumulator fed by the argmax class only. Approximation for large K.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    #[default]
    None,
    /// Answers with the record's ground-truth label (simulated labeler).
    Oracle,
    /// Blocks until a label arrives through the feedback queue.
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Max zero-shot probability against the running percentile.
    #[default]
    Confidence,
    /// Max raw cosine similarity against the running percentile.
    Similarity,
    /// Bernoulli(γ) from a seeded generator.
    Random,
}

macro_rules! kebab_enum_str {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = DotaError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(DotaError::Ingestion(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

kebab_enum_str!(CovBackend { PerClass => "per-class", Pooled => "pooled" });
kebab_enum_str!(FeedbackMode { None => "none", Oracle => "oracle", Human => "human" });
kebab_enum_str!(SelectionStrategy {
    Confidence => "confidence",
    Similarity => "similarity",
    Random => "random",
});

/// All hyperparameters of an adaptation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Initial isotropic variance σ².
    pub sigma2: f64,
    /// Shrinkage ε applied before inverting the shared covariance.
    pub epsilon: f64,
    /// Slope ρ of the fusion-weight ramp.
    pub rho: f64,
    /// Cap η of the fusion weight.
    pub eta: f64,
    /// Fraction γ of samples routed to feedback.
    pub gamma: f64,
    pub cov_backend: CovBackend,
    /// Zero-shot responsibilities below this value are dropped from updates.
    pub responsibility_floor: f64,
    pub precision_refresh_interval: u64,
    /// Number of initial samples that are never flagged.
    pub uncertainty_warmup: u64,
    pub feedback_mode: FeedbackMode,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    /// Ablation: keep every covariance at σ²I (mean-only discriminant).
    #[serde(default)]
    pub freeze_covariance: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            sigma2: 0.002,
            epsilon: 1e-4,
            rho: 0.01,
            eta: 0.3,
            gamma: 0.05,
            cov_backend: CovBackend::PerClass,
            responsibility_floor: 1e-3,
            precision_refresh_interval: 1,
            uncertainty_warmup: 0,
            feedback_mode: FeedbackMode::None,
            strategy: SelectionStrategy::Confidence,
            seed: 42,
            freeze_covariance: false,
        }
    }
}

impl AdaptConfig {
    /// Checks every field against its allowed range.
    pub fn validate(self) -> Result<Self> {
        fn finite(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(DotaError::config(field, format!("{field} must be finite")))
            }
        }
        finite("sigma2", self.sigma2)?;
        finite("epsilon", self.epsilon)?;
        finite("rho", self.rho)?;
        finite("eta", self.eta)?;
        finite("gamma", self.gamma)?;
        finite("responsibility_floor", self.responsibility_floor)?;
        if self.sigma2 <= 0.0 {
            return Err(DotaError::config("sigma2", "sigma2 must be > 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(DotaError::config("epsilon", "epsilon must lie in (0,1)"));
        }
        if self.rho < 0.0 {
            return Err(DotaError::config("rho", "rho must be >= 0"));
        }
        if self.eta < 0.0 {
            return Err(DotaError::config("eta", "eta must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DotaError::config("gamma", "gamma must lie in [0,1]"));
        }
        if !(0.0..1.0).contains(&self.responsibility_floor) {
            return Err(DotaError::config(
                "responsibility_floor",
                "responsibility_floor must lie in [0,1)",
            ));
        }
        if self.precision_refresh_interval == 0 {
            return Err(DotaError::config(
                "precision_refresh_interval",
                "precision_refresh_interval must be a positive integer",
            ));
        }
        Ok(self)
    }
}

/// A normalized distribution over the K classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    probs: Vec<f64>,
    confidence: f64,
    argmax: usize,
}

impl Posterior {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self::from_probs(softmax(logits))
    }

    pub(crate) fn from_probs(probs: Vec<f64>) -> Self {
        let argmax = argmax(&probs);
        let confidence = probs[argmax];
        let posterior = Self { probs, confidence, argmax };
        debug_assert!(posterior.check_invariants(), "posterior invariants violated: {posterior:?}");
        posterior
    }

    fn check_invariants(&self) -> bool {
        let sum: f64 = self.probs.iter().sum();
        (sum - 1.0).abs() <= 1e-9
            && self.probs.iter().all(|p| (0.0..=1.0).contains(p))
            && self.probs.iter().all(|&p| p <= self.confidence)
            && self.probs[self.argmax] == self.confidence
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn argmax(&self) -> usize {
        self.argmax
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}
