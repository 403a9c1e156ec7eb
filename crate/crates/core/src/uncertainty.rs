//! Streaming percentile gate deciding which samples are uncertain.
//!
//! A sample with score `s_i` is flagged when `s_i ≤ s_γ`, where `s_γ` is the
//! nearest-rank γ-percentile of every score seen so far *including* `s_i`.
//! All scores are retained. γ = 0 never flags.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::model::{AdaptConfig, Posterior, SelectionStrategy};

/// 1-based nearest rank `max(1, ⌈γ·n⌉)`, clamped to `n`.
fn nearest_rank(gamma: f64, n: usize) -> usize {
    // The slack absorbs products like 0.15·20 landing a hair above an integer.
    let r = (gamma * n as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Nearest-rank percentile: the `max(1, ⌈γ·n⌉)`-th smallest score.
pub fn percentile(scores: &[f64], gamma: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(DotaError::Empty("percentile of an empty score set"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(gamma, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub flagged: bool,
    /// Score appended to the history for this sample.
    pub score: f64,
    /// Percentile threshold (`None` for the random strategy).
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HistoryMark {
    len: usize,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistory {
    strategy: SelectionStrategy,
    scores: Vec<f64>,
    sorted: Vec<f64>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl ScoreHistory {
    pub fn new(strategy: SelectionStrategy, rng_seed: u64) -> Self {
        Self {
            strategy,
            scores: Vec::new(),
            sorted: Vec::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn strategy(&self) -> SelectionStrategy {
        self.strategy
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn push(&mut self, score: f64) {
        self.scores.push(score);
        let pos = self.sorted.partition_point(|&v| v <= score);
        self.sorted.insert(pos, score);
    }

    /// Captures what [`ScoreHistory::rollback`] needs to undo the next gate.
    pub fn mark(&self) -> HistoryMark {
        HistoryMark { len: self.scores.len(), rng: self.rng.clone() }
    }

    /// Undoes every gate since `mark`.
    pub fn rollback(&mut self, mark: HistoryMark) {
        while self.scores.len() > mark.len {
            let score = self.scores.pop().expect("len checked");
            let pos = self.sorted.partition_point(|&v| v < score);
            self.sorted.remove(pos);
        }
        self.rng = mark.rng;
    }

    /// Appends a raw score and flags it against the percentile of the updated
    /// set. Ignores the strategy; used by [`ScoreHistory::gate`].
    pub fn push_and_test(&mut self, score: f64, gamma: f64, warmup: u64) -> GateDecision {
        self.push(score);
        let i = self.scores.len();
        let threshold = self.sorted[nearest_rank(gamma, i) - 1];
        let flagged = gamma > 0.0 && i as u64 > warmup && score <= threshold;
        GateDecision { flagged, score, threshold: Some(threshold) }
    }

    /// Gates one sample. `cosines` are the raw zero-shot cosine similarities
    /// (used by the similarity strategy).
    pub fn gate(&mut self, zs: &Posterior, cosines: &[f64], cfg: &AdaptConfig) -> GateDecision {
        match self.strategy {
            SelectionStrategy::Confidence => {
                self.push_and_test(zs.confidence(), cfg.gamma, cfg.uncertainty_warmup)
            }
            SelectionStrategy::Similarity => {
                let best = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                self.push_and_test(best, cfg.gamma, cfg.uncertainty_warmup)
            }
            SelectionStrategy::Random => {
                let draw: f64 = self.rng.random();
                let score = zs.confidence();
                self.push(score);
                let flagged = self.scores.len() as u64 > cfg.uncertainty_warmup && draw < cfg.gamma;
                GateDecision { flagged, score, threshold: None }
            }
        }
    }
}
