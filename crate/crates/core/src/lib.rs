//! Streaming test-time adaptation of a frozen zero-shot classifier.
//!
//! Each sample is scored by the zero-shot head, optionally routed for a label,
//! folded into online per-class Gaussian estimates and classified by the fused
//! posterior. See [`session::Session`] for the per-sample loop.

pub mod error;
pub mod eval;
pub mod feedback;
pub mod fusion;
pub mod gda;
pub mod model;
pub mod session;
pub mod stream_io;
pub mod synth;
pub mod uncertainty;
pub mod zeroshot;

pub use error::{DotaError, Result};
pub use eval::{RunReport, Summary, Timing};
pub use feedback::{FeedbackAnswer, FeedbackQueue, FeedbackRequest};
pub use gda::{GdaState, Responsibilities};
pub use model::{
    AdaptConfig, ClassifierSpec, CovBackend, EmbeddingRecord, FeedbackMode, Posterior, SelectionStrategy,
};
pub use session::{PredictionRecord, Session, SessionState};
