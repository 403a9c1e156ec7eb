//! Run reports and the analysis harness: improvement curves, covariance
//! ablation and uncertainty-selection comparisons.
//!
//! Every summary number is a pure function of the prediction log.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::model::{AdaptConfig, ClassifierSpec, EmbeddingRecord, FeedbackMode, SelectionStrategy};
use crate::session::{PredictionRecord, Session, SkippedSample};

pub const DEFAULT_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timing {
    pub elapsed_ms: f64,
    pub per_sample_us: f64,
}

impl Timing {
    pub fn new(elapsed: Duration, samples: u64) -> Self {
        let secs = elapsed.as_secs_f64();
        Self {
            elapsed_ms: secs * 1e3,
            per_sample_us: if samples == 0 { 0.0 } else { secs * 1e6 / samples as f64 },
        }
    }
}

fn accuracy<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>, zero_shot: bool) -> Option<f64> {
    let (mut hits, mut total) = (0u64, 0u64);
    for r in records {
        if let Some(t) = r.true_label {
            total += 1;
            let p = if zero_shot { r.zs_argmax } else { r.prediction };
            hits += u64::from(p == t);
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_samples: usize,
    pub n_labeled: usize,
    pub overall_acc: Option<f64>,
    pub zs_acc: Option<f64>,
    /// Accuracy over the trailing ⌈N/2⌉ samples.
    pub last_half_acc: Option<f64>,
    pub flagged_count: usize,
    pub flagged_fraction: f64,
    pub feedback_count: usize,
    /// Zero-shot accuracy restricted to flagged samples.
    pub flagged_zs_acc: Option<f64>,
    pub window: usize,
    /// Accuracy per consecutive window (last window may be partial).
    pub window_acc: Vec<Option<f64>>,
    pub window_zs_acc: Vec<Option<f64>>,
    pub final_lambda: f64,
}

impl Summary {
    pub fn from_log(log: &[PredictionRecord], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(DotaError::config("window", "window must be positive"));
        }
        let n = log.len();
        let flagged: Vec<&PredictionRecord> = log.iter().filter(|r| r.flagged).collect();
        let half = n.div_ceil(2);
        Ok(Self {
            n_samples: n,
            n_labeled: log.iter().filter(|r| r.true_label.is_some()).count(),
            overall_acc: accuracy(log, false),
            zs_acc: accuracy(log, true),
            last_half_acc: accuracy(&log[n - half..], false),
            flagged_count: flagged.len(),
            flagged_fraction: if n == 0 { 0.0 } else { flagged.len() as f64 / n as f64 },
            feedback_count: log.iter().filter(|r| r.feedback_label.is_some()).count(),
            flagged_zs_acc: accuracy(flagged.iter().copied(), true),
            window,
            window_acc: log.chunks(window).map(|c| accuracy(c, false)).collect(),
            window_zs_acc: log.chunks(window).map(|c| accuracy(c, true)).collect(),
            final_lambda: log.last().map_or(0.0, |r| r.lambda),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: AdaptConfig,
    pub log: Vec<PredictionRecord>,
    pub skipped: Vec<SkippedSample>,
    pub summary: Summary,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(
        config: AdaptConfig,
        log: Vec<PredictionRecord>,
        skipped: Vec<SkippedSample>,
        window: usize,
        timing: Timing,
    ) -> Result<Self> {
        let summary = Summary::from_log(&log, window)?;
        Ok(Self { config, log, skipped, summary, timing })
    }
}

/// Trailing-window accuracy difference (adapted − zero-shot). Point `i` covers
/// labeled samples `i+1−window ..= i`; the series starts at the first full window.
pub fn improvement_curve(log: &[PredictionRecord], window: usize) -> Result<Vec<(u64, f64)>> {
    let labeled: Vec<&PredictionRecord> = log.iter().filter(|r| r.true_label.is_some()).collect();
    if labeled.is_empty() {
        return Err(DotaError::Empty("improvement curve needs labeled samples"));
    }
    if window == 0 || window > labeled.len() {
        return Err(DotaError::config(
            "window",
            format!("window {window} must lie in [1, {}]", labeled.len()),
        ));
    }
    // prefix sums of (correct − zs_correct)
    let mut prefix = Vec::with_capacity(labeled.len() + 1);
    prefix.push(0i64);
    for r in &labeled {
        let t = r.true_label.expect("filtered");
        let diff = i64::from(r.prediction == t) - i64::from(r.zs_argmax == t);
        prefix.push(prefix.last().unwrap() + diff);
    }
    Ok((window..=labeled.len())
        .map(|end| (labeled[end - 1].index, (prefix[end] - prefix[end - window]) as f64 / window as f64))
        .collect())
}

pub fn run_records(
    records: &[EmbeddingRecord],
    spec: &ClassifierSpec,
    cfg: &AdaptConfig,
    window: usize,
) -> Result<RunReport> {
    let mut session = Session::new(spec.clone(), cfg.clone())?;
    session.run_stream(records.iter().cloned().map(Ok), window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceAblation {
    pub full: RunReport,
    pub frozen: RunReport,
    /// `full − frozen` overall accuracy.
    pub delta: Option<f64>,
}

/// Runs the full estimator and the mean-only variant (covariance frozen at σ²I)
/// on the same stream and seed.
pub fn ablate_covariance(
    records: &[EmbeddingRecord],
    spec: &ClassifierSpec,
    cfg: &AdaptConfig,
    window: usize,
) -> Result<CovarianceAblation> {
    let full = run_records(records, spec, &AdaptConfig { freeze_covariance: false, ..cfg.clone() }, window)?;
    let frozen = run_records(records, spec, &AdaptConfig { freeze_covariance: true, ..cfg.clone() }, window)?;
    let delta = match (full.summary.overall_acc, frozen.summary.overall_acc) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(CovarianceAblation { full, frozen, delta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: SelectionStrategy,
    pub gamma: f64,
    pub overall_acc: f64,
    pub zs_acc: f64,
    pub flagged_count: usize,
    /// Zero-shot accuracy on the flagged subset (`None` when nothing was flagged).
    pub flagged_zs_acc: Option<f64>,
}

/// Oracle-feedback runs for every (strategy, γ) pair on the same stream and seed.
pub fn compare_strategies(
    records: &[EmbeddingRecord],
    spec: &ClassifierSpec,
    cfg: &AdaptConfig,
    strategies: &[SelectionStrategy],
    gammas: &[f64],
) -> Result<Vec<StrategyRow>> {
    if let Some(r) = records.iter().find(|r| r.true_label.is_none()) {
        return Err(DotaError::Ingestion(format!(
            "strategy comparison needs labels, sample {:?} has none",
            r.id
        )));
    }
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &strategy in strategies {
            let run_cfg = AdaptConfig { gamma, strategy, feedback_mode: FeedbackMode::Oracle, ..cfg.clone() };
            let report = run_records(records, spec, &run_cfg, DEFAULT_WINDOW)?;
            let s = &report.summary;
            rows.push(StrategyRow {
                strategy,
                gamma,
                overall_acc: s.overall_acc.unwrap_or(0.0),
                zs_acc: s.zs_acc.unwrap_or(0.0),
                flagged_count: s.flagged_count,
                flagged_zs_acc: s.flagged_zs_acc,
            });
        }
    }
    Ok(rows)
}
