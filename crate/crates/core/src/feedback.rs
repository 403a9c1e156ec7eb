//! Labels for gated-uncertain samples.
//!
//! An answered sample enters the estimator as a one-hot responsibility of
//! weight 1 at the answered class. In human mode the session blocks on a
//! [`FeedbackQueue`] that holds at most one pending request.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::gda::Responsibilities;
use crate::model::{EmbeddingRecord, FeedbackMode, Posterior};

const TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub class_index: usize,
    pub class_name: String,
    pub fused_prob: f64,
    pub zs_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub sample_id: String,
    pub asset_uri: Option<String>,
    /// Up to five candidates, highest fused probability first.
    pub topk: Vec<Candidate>,
    /// Milliseconds since the owning session started.
    pub created_at: u64,
}

impl FeedbackRequest {
    pub fn new(
        record: &EmbeddingRecord,
        class_names: &[String],
        fused: &Posterior,
        zs: &Posterior,
        created_at: u64,
    ) -> Self {
        let mut order: Vec<usize> = (0..fused.len()).collect();
        // stable sort keeps lower indices first on ties
        order.sort_by(|&a, &b| fused.probs()[b].total_cmp(&fused.probs()[a]));
        let topk = order
            .into_iter()
            .take(TOP_K)
            .map(|k| Candidate {
                class_index: k,
                class_name: class_names[k].clone(),
                fused_prob: fused.probs()[k],
                zs_prob: zs.probs()[k],
            })
            .collect();
        Self { sample_id: record.id.clone(), asset_uri: record.asset_uri.clone(), topk, created_at }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackAnswer {
    pub sample_id: String,
    pub label: usize,
    pub source: FeedbackSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Answered(FeedbackAnswer),
    /// Waiting on a human; the caller must block on the queue.
    Pending(FeedbackRequest),
    /// Feedback disabled; the sample keeps its zero-shot responsibilities.
    NotRequested,
}

pub fn resolve(request: FeedbackRequest, mode: FeedbackMode, record: &EmbeddingRecord) -> Result<Resolution> {
    match mode {
        FeedbackMode::None => Ok(Resolution::NotRequested),
        FeedbackMode::Oracle => {
            let label = record.true_label.ok_or_else(|| {
                DotaError::config(
                    "feedback_mode",
                    format!("oracle feedback needs a ground-truth label, sample {:?} has none", record.id),
                )
            })?;
            Ok(Resolution::Answered(FeedbackAnswer {
                sample_id: record.id.clone(),
                label,
                source: FeedbackSource::Oracle,
            }))
        }
        FeedbackMode::Human => Ok(Resolution::Pending(request)),
    }
}

pub fn to_responsibilities(answer: &FeedbackAnswer, num_classes: usize) -> Result<Responsibilities> {
    if answer.label >= num_classes {
        return Err(DotaError::Feedback(format!(
            "label {} out of range for {num_classes} classes",
            answer.label
        )));
    }
    Ok(Responsibilities::one_hot(answer.label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted,
    /// Same label re-submitted for an already applied sample; nothing changes.
    AlreadyApplied,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("sample {0:?} is not the pending sample")]
    NotPending(String),
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
}

#[derive(Debug, Default)]
struct QueueInner {
    pending: Option<FeedbackRequest>,
    answer: Option<FeedbackAnswer>,
    applied: HashMap<String, usize>,
    closed: bool,
}

/// Single-slot rendezvous between a blocked session and a labeling client.
#[derive(Debug)]
pub struct FeedbackQueue {
    inner: Mutex<QueueInner>,
    ready: Condvar,
    num_classes: usize,
    started: Instant,
}

impl FeedbackQueue {
    pub fn new(num_classes: usize) -> Self {
        Self { inner: Mutex::default(), ready: Condvar::new(), num_classes, started: Instant::now() }
    }

    fn lock(&self) -> MutexGuard<'_, QueueInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    pub fn pending(&self) -> Option<FeedbackRequest> {
        self.lock().pending.clone()
    }

    pub fn num_applied(&self) -> usize {
        self.lock().applied.len()
    }

    /// Publishes `request` and blocks until it is answered or the queue closes.
    pub fn request_and_wait(&self, request: FeedbackRequest) -> Result<FeedbackAnswer> {
        let sample_id = request.sample_id.clone();
        let mut inner = self.lock();
        inner.answer = None;
        inner.pending = Some(request);
        loop {
            if let Some(answer) = inner.answer.take() {
                debug_assert_eq!(answer.sample_id, sample_id);
                return Ok(answer);
            }
            if inner.closed {
                inner.pending = None;
                return Err(DotaError::Feedback(format!("queue closed while waiting on {sample_id:?}")));
            }
            inner = self.ready.wait(inner).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Answers the pending request. Re-submitting the same label for an
    /// already applied sample is accepted without effect.
    pub fn submit(&self, sample_id: &str, label: usize) -> std::result::Result<SubmitOutcome, SubmitError> {
        if label >= self.num_classes {
            return Err(SubmitError::InvalidLabel { label, num_classes: self.num_classes });
        }
        let mut inner = self.lock();
        if let Some(&applied) = inner.applied.get(sample_id) {
            return if applied == label {
                Ok(SubmitOutcome::AlreadyApplied)
            } else {
                Err(SubmitError::NotPending(sample_id.to_string()))
            };
        }
        match &inner.pending {
            Some(p) if p.sample_id == sample_id => {
                inner.pending = None;
                inner.applied.insert(sample_id.to_string(), label);
                inner.answer = Some(FeedbackAnswer {
                    sample_id: sample_id.to_string(),
                    label,
                    source: FeedbackSource::Human,
                });
                self.ready.notify_all();
                Ok(SubmitOutcome::Accepted)
            }
            _ => Err(SubmitError::NotPending(sample_id.to_string())),
        }
    }

    /// Wakes any blocked session with an error.
    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }
}
