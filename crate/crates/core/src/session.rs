//! Per-sample adaptation loop.
//!
//! For every sample, in this order: zero-shot posterior, uncertainty gate,
//! feedback (when flagged), estimator update, discriminant scoring, fusion,
//! prediction. The update precedes scoring, so a sample contributes to its own
//! test-time score.

use std::sync::Arc;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::eval::{RunReport, Timing};
use crate::feedback::{self, FeedbackQueue, FeedbackRequest, Resolution};
use crate::fusion::{fused_posterior, lambda_schedule};
use crate::gda::{truncate_responsibilities, GdaState};
use crate::model::{AdaptConfig, ClassifierSpec, EmbeddingRecord, FeedbackMode, Posterior};
use crate::uncertainty::{GateDecision, ScoreHistory};
use crate::zeroshot::cosine_similarities;

/// One line of the per-sample prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: u64,
    pub id: String,
    pub zs_argmax: usize,
    pub fused_argmax: usize,
    /// Feedback label when answered, otherwise the fused argmax.
    pub prediction: usize,
    /// Zero-shot confidence of the sample.
    pub confidence: f64,
    pub fused_confidence: f64,
    pub lambda: f64,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

impl PredictionRecord {
    pub fn zs_correct(&self) -> Option<bool> {
        self.true_label.map(|t| t == self.zs_argmax)
    }
}

#[derive(Debug, Clone)]
pub struct PredictionOutcome {
    pub record: PredictionRecord,
    pub zs: Posterior,
    pub fused: Posterior,
    pub gate: GateDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub position: u64,
    pub id: String,
    pub reason: String,
}

/// Pipeline stages, recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    ZeroShot,
    Gate,
    Feedback,
    Update,
    Score,
    Predict,
}

/// Running counters mirrored from the log for cheap snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMetrics {
    pub processed: u64,
    pub labeled: u64,
    pub correct: u64,
    pub zs_correct: u64,
    pub flagged: u64,
    pub feedback: u64,
}

/// Everything needed to resume a session exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub spec: ClassifierSpec,
    pub cfg: AdaptConfig,
    pub gda: GdaState,
    pub history: ScoreHistory,
    /// Number of fully processed samples.
    pub fusion_count: u64,
    /// Stream position (processed + skipped).
    pub position: u64,
    pub metrics: RunningMetrics,
    pub log: Vec<PredictionRecord>,
    pub skipped: Vec<SkippedSample>,
}

pub struct Session {
    state: SessionState,
    human: Option<Arc<FeedbackQueue>>,
    trace: Option<Vec<(u64, Stage)>>,
    started: Instant,
}

impl Session {
    pub fn new(spec: ClassifierSpec, cfg: AdaptConfig) -> Result<Self> {
        let cfg = cfg.validate()?;
        let gda = GdaState::init(&spec, &cfg)?;
        let history = ScoreHistory::new(cfg.strategy, cfg.seed);
        Ok(Self::from_state(SessionState {
            spec,
            cfg,
            gda,
            history,
            fusion_count: 0,
            position: 0,
            metrics: RunningMetrics::default(),
            log: Vec::new(),
            skipped: Vec::new(),
        }))
    }

    pub fn from_state(state: SessionState) -> Self {
        Self { state, human: None, trace: None, started: Instant::now() }
    }

    /// Attaches the queue a human-mode session blocks on.
    pub fn with_feedback_queue(mut self, queue: Arc<FeedbackQueue>) -> Self {
        self.human = Some(queue);
        self
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[(u64, Stage)]> {
        self.trace.as_deref()
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn into_state(self) -> SessionState {
        self.state
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.state.spec
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.state.cfg
    }

    pub fn gda(&self) -> &GdaState {
        &self.state.gda
    }

    pub fn log(&self) -> &[PredictionRecord] {
        &self.state.log
    }

    pub fn metrics(&self) -> &RunningMetrics {
        &self.state.metrics
    }

    fn mark(&mut self, stage: Stage) {
        let index = self.state.position;
        if let Some(trace) = &mut self.trace {
            trace.push((index, stage));
        }
    }

    fn check_record(&self, record: &EmbeddingRecord) -> Result<()> {
        let spec = &self.state.spec;
        if record.dim() != spec.dim() {
            return Err(DotaError::Compatibility(format!(
                "sample {:?} has dimension {} but the classifier has {}",
                record.id,
                record.dim(),
                spec.dim()
            )));
        }
        if let Some(label) = record.true_label {
            if label >= spec.num_classes() {
                return Err(DotaError::Compatibility(format!(
                    "sample {:?} has label {label} but the classifier has {} classes",
                    record.id,
                    spec.num_classes()
                )));
            }
        }
        Ok(())
    }

    /// Runs one sample through the full pipeline. On error nothing is mutated
    /// except the stream position.
    pub fn process_sample(&mut self, record: &EmbeddingRecord) -> Result<PredictionOutcome> {
        let result = self.process_inner(record);
        self.state.position += 1;
        result
    }

    fn process_inner(&mut self, record: &EmbeddingRecord) -> Result<PredictionOutcome> {
        self.check_record(record)?;
        let x = &record.embedding;
        let k = self.state.spec.num_classes();

        self.mark(Stage::ZeroShot);
        let cosines = cosine_similarities(x, &self.state.spec)?;
        let tau = self.state.spec.temperature();
        let zs_logits: Vec<f64> = cosines.iter().map(|c| c / tau).collect();
        let zs = Posterior::from_logits(&zs_logits);

        self.mark(Stage::Gate);
        let history_mark = self.state.history.mark();
        let gate = self.state.history.gate(&zs, &cosines, &self.state.cfg);
        let weight = lambda_schedule(self.state.fusion_count, &self.state.cfg);

        let mut answer = None;
        if gate.flagged && self.state.cfg.feedback_mode != FeedbackMode::None {
            self.mark(Stage::Feedback);
            match self.collect_feedback(record, &zs, &zs_logits, weight.lambda) {
                Ok(a) => answer = a,
                Err(e) => {
                    self.state.history.rollback(history_mark);
                    return Err(e);
                }
            }
        }

        self.mark(Stage::Update);
        let responsibilities = match &answer {
            Some(a) => feedback::to_responsibilities(a, k)?,
            None => truncate_responsibilities(&zs, self.state.cfg.responsibility_floor),
        };
        if let Err(e) = self.state.gda.update(x, &responsibilities) {
            self.state.history.rollback(history_mark);
            return Err(e);
        }

        self.mark(Stage::Score);
        let scores = self.state.gda.discriminant_scores(x)?;
        let fused = fused_posterior(&zs_logits, &scores, weight.lambda)?;

        self.mark(Stage::Predict);
        let feedback_label = answer.map(|a| a.label);
        let prediction = feedback_label.unwrap_or(fused.argmax());
        let out = PredictionRecord {
            index: self.state.fusion_count,
            id: record.id.clone(),
            zs_argmax: zs.argmax(),
            fused_argmax: fused.argmax(),
            prediction,
            confidence: zs.confidence(),
            fused_confidence: fused.confidence(),
            lambda: weight.lambda,
            flagged: gate.flagged,
            feedback_label,
            true_label: record.true_label,
            correct: record.true_label.map(|t| t == prediction),
        };

        let m = &mut self.state.metrics;
        m.processed += 1;
        m.flagged += u64::from(out.flagged);
        m.feedback += u64::from(out.feedback_label.is_some());
        if let Some(t) = out.true_label {
            m.labeled += 1;
            m.correct += u64::from(t == out.prediction);
            m.zs_correct += u64::from(t == out.zs_argmax);
        }
        self.state.fusion_count += 1;
        self.state.log.push(out.clone());
        Ok(PredictionOutcome { record: out, zs, fused, gate })
    }

    fn collect_feedback(
        &self,
        record: &EmbeddingRecord,
        zs: &Posterior,
        zs_logits: &[f64],
        lambda: f64,
    ) -> Result<Option<feedback::FeedbackAnswer>> {
        // The labeler sees the fused posterior of the state before this sample's update.
        let preview_scores = self.state.gda.discriminant_scores(&record.embedding)?;
        let preview = fused_posterior(zs_logits, &preview_scores, lambda)?;
        let created_at = self.human.as_ref().map_or(0, |q| q.elapsed_ms());
        let request = FeedbackRequest::new(record, self.state.spec.class_names(), &preview, zs, created_at);
        match feedback::resolve(request, self.state.cfg.feedback_mode, record)? {
            Resolution::Answered(a) => Ok(Some(a)),
            Resolution::NotRequested => Ok(None),
            Resolution::Pending(request) => {
                let queue = self.human.as_ref().ok_or_else(|| {
                    DotaError::config("feedback_mode", "human feedback mode needs an attached feedback queue")
                })?;
                Ok(Some(queue.request_and_wait(request)?))
            }
        }
    }

    /// Processes every record in order. Read errors abort; per-sample errors
    /// are logged and the sample is skipped.
    pub fn run_stream<I>(&mut self, records: I, window: usize) -> Result<RunReport>
    where
        I: IntoIterator<Item = Result<EmbeddingRecord>>,
    {
        self.run_stream_with(records, window, |_, _| {})
    }

    /// As [`Session::run_stream`], calling `observer` after every processed sample.
    pub fn run_stream_with<I, F>(&mut self, records: I, window: usize, mut observer: F) -> Result<RunReport>
    where
        I: IntoIterator<Item = Result<EmbeddingRecord>>,
        F: FnMut(&Session, &PredictionOutcome),
    {
        let started = Instant::now();
        for item in records {
            let record = item?;
            let position = self.state.position;
            match self.process_sample(&record) {
                Ok(outcome) => observer(self, &outcome),
                // A closed queue means the operator shut the session down.
                Err(DotaError::Feedback(reason)) if self.human.is_some() => {
                    return Err(DotaError::Feedback(reason));
                }
                Err(e) => {
                    warn!("skipping sample {:?} at position {position}: {e}", record.id);
                    self.state.skipped.push(SkippedSample { position, id: record.id.clone(), reason: e.to_string() });
                }
            }
        }
        let elapsed = started.elapsed();
        self.report(window, Timing::new(elapsed, self.state.fusion_count))
    }

    pub fn report(&self, window: usize, timing: Timing) -> Result<RunReport> {
        RunReport::new(self.state.cfg.clone(), self.state.log.clone(), self.state.skipped.clone(), window, timing)
    }

    pub fn uptime_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }
}
