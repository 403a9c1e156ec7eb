//! Frozen zero-shot head: softmax over temperature-scaled cosine similarities.

use nalgebra::DVector;

use crate::error::{DotaError, Result};
use crate::model::{ClassifierSpec, Posterior};

fn check_dim(x: &DVector<f64>, spec: &ClassifierSpec) -> Result<()> {
    if x.len() != spec.dim() {
        return Err(DotaError::Dimension { expected: spec.dim(), got: x.len() });
    }
    Ok(())
}

/// Cosine similarity of `x` to each class weight. Both sides are unit-norm,
/// so this is a plain dot product.
pub fn cosine_similarities(x: &DVector<f64>, spec: &ClassifierSpec) -> Result<Vec<f64>> {
    check_dim(x, spec)?;
    Ok(spec.weights().iter().map(|w| w.dot(x)).collect())
}

/// `logit_k = ⟨x, w_k⟩ / τ`.
pub fn zs_logits(x: &DVector<f64>, spec: &ClassifierSpec) -> Result<Vec<f64>> {
    let tau = spec.temperature();
    Ok(cosine_similarities(x, spec)?.into_iter().map(|c| c / tau).collect())
}

pub fn zs_posterior(x: &DVector<f64>, spec: &ClassifierSpec) -> Result<Posterior> {
    Ok(Posterior::from_logits(&zs_logits(x, spec)?))
}
