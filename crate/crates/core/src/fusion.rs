//! Fusion of zero-shot logits with discriminant scores.

use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::model::{AdaptConfig, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeight {
    pub lambda: f64,
    /// Samples completed before the current one.
    pub sample_count: u64,
}

/// `λ = min(ρ·c, η)`.
pub fn lambda_schedule(sample_count: u64, cfg: &AdaptConfig) -> FusionWeight {
    FusionWeight { lambda: (cfg.rho * sample_count as f64).min(cfg.eta), sample_count }
}

/// `softmax(zs_logits + λ·f)`.
pub fn fused_posterior(zs_logits: &[f64], scores: &[f64], lambda: f64) -> Result<Posterior> {
    if zs_logits.len() != scores.len() {
        return Err(DotaError::Dimension { expected: zs_logits.len(), got: scores.len() });
    }
    let fused: Vec<f64> = zs_logits.iter().zip(scores).map(|(z, f)| z + lambda * f).collect();
    Ok(Posterior::from_logits(&fused))
}
