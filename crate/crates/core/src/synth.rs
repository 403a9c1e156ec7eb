//! Seeded synthetic streams with known class-conditional Gaussians.
//!
//! True class means are unit vectors placed on a regular simplex around a
//! common center (as embeddings of related classes are in practice). The exported zero-shot
//! weights are the true means rotated by a fixed angle towards a random
//! direction orthogonal to all class means, which models the gap between the
//! frozen head and the deployment data.
//! Samples are drawn from `N(μ_k*, Σ_k*)` and then normalized.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::model::{argmax, EmbeddingRecord};
use crate::stream_io::{RawClassifier, RawRecord};

/// Knobs from which a concrete [`SynthSpec`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub dim: usize,
    pub n_samples: usize,
    pub perturbation_deg: f64,
    pub anisotropic: bool,
    /// RMS norm of the (pre-normalization) noise vector.
    pub noise_scale: f64,
    /// Distance of each class mean from the shared center (before normalization).
    pub mean_spread: f64,
    /// Largest-to-smallest eigenvalue ratio in anisotropic mode.
    pub anisotropy_ratio: f64,
    pub temperature: f64,
    /// Relative class frequencies; uniform when `None`.
    pub class_balance: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 5,
            dim: 16,
            n_samples: 5000,
            perturbation_deg: 25.0,
            anisotropic: true,
            noise_scale: 0.2,
            mean_spread: 0.25,
            anisotropy_ratio: 100.0,
            temperature: 0.01,
            class_balance: None,
            seed: 7,
        }
    }
}

/// Fully specified generator: ground-truth parameters plus sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub dim: usize,
    pub true_means: Vec<Vec<f64>>,
    pub true_covs: Vec<Vec<Vec<f64>>>,
    pub weight_perturbation_deg: f64,
    pub n_samples: usize,
    pub class_balance: Vec<f64>,
    pub temperature: f64,
    pub seed: u64,
}

/// Ground truth written next to a generated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub class_names: Vec<String>,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<RawRecord>,
    pub classifier: RawClassifier,
    pub truth: TruthManifest,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Unit vector orthogonal to every vector in `basis` (or to `axis` alone when
/// the basis already spans the space).
fn orthogonal_direction(rng: &mut ChaCha8Rng, axis: &DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    let dim = axis.len();
    let span: Vec<&DVector<f64>> = if basis.len() < dim { basis.iter().collect() } else { vec![axis] };
    loop {
        let mut v = gaussian_vec(rng, dim);
        // two Gram-Schmidt passes against an orthonormalized span
        let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(span.len());
        for b in &span {
            let mut q = (*b).clone();
            for o in &ortho {
                q -= o * o.dot(&q);
            }
            if q.norm() > 1e-10 {
                ortho.push(unit(q));
            }
        }
        for _ in 0..2 {
            for o in &ortho {
                v -= o * o.dot(&v);
            }
        }
        if v.norm() > 1e-8 {
            return unit(v);
        }
    }
}

/// Unit means at the vertices of a regular simplex centered on `center`, with
/// vertex distance `spread` from the center before normalization. Every pair of
/// classes is equally separated. Needs `k < dim`.
fn simplex_means(rng: &mut ChaCha8Rng, center: &DVector<f64>, k: usize, spread: f64) -> Vec<DVector<f64>> {
    let dim = center.len();
    let mut basis: Vec<DVector<f64>> = vec![center.clone()];
    while basis.len() < k + 1 {
        let mut v = gaussian_vec(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                v -= b * b.dot(&v);
            }
        }
        if v.norm() > 1e-8 {
            basis.push(unit(v));
        }
    }
    // vertex j of the standard simplex, centered and scaled to unit radius
    let radius = ((k - 1) as f64 / k as f64).sqrt();
    (0..k)
        .map(|j| {
            let mut offset = DVector::zeros(dim);
            for (i, b) in basis[1..].iter().enumerate() {
                let coord = if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64;
                offset += b * (coord / radius);
            }
            unit(center + offset * spread)
        })
        .collect()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(DotaError::Ingestion("covariance is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

impl SynthSpec {
    pub fn from_config(cfg: &SynthConfig) -> Result<Self> {
        if cfg.k < 2 || cfg.dim <= cfg.k {
            return Err(DotaError::Ingestion(format!("synth needs 2 <= k < dim, got k = {} and dim = {}", cfg.k, cfg.dim)));
        }
        if !(cfg.noise_scale > 0.0 && cfg.mean_spread >= 0.0 && cfg.anisotropy_ratio >= 1.0) {
            return Err(DotaError::Ingestion("noise_scale > 0, mean_spread >= 0, anisotropy_ratio >= 1 required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dim = cfg.dim;
        let center = unit(gaussian_vec(&mut rng, dim));
        let means = simplex_means(&mut rng, &center, cfg.k, cfg.mean_spread);

        let per_dim = cfg.noise_scale * cfg.noise_scale / dim as f64;
        let shape = if cfg.anisotropic {
            // log-spaced spectrum with the requested ratio, rescaled to unit mean
            let q = random_orthogonal(&mut rng, dim);
            let log_ratio = cfg.anisotropy_ratio.ln();
            let raw: Vec<f64> = (0..dim)
                .map(|i| (log_ratio * (0.5 - i as f64 / (dim - 1) as f64)).exp())
                .collect();
            let mean = raw.iter().sum::<f64>() / dim as f64;
            let diag = DMatrix::from_diagonal(&DVector::from_iterator(dim, raw.iter().map(|v| v / mean)));
            &q * diag * q.transpose()
        } else {
            DMatrix::identity(dim, dim)
        };
        let mut cov = shape * per_dim;
        cov = (&cov + cov.transpose()) * 0.5;

        let balance = match &cfg.class_balance {
            Some(b) if b.len() == cfg.k => b.clone(),
            Some(b) => return Err(DotaError::Dimension { expected: cfg.k, got: b.len() }),
            None => vec![1.0; cfg.k],
        };
        Ok(Self {
            k: cfg.k,
            dim,
            true_means: means.iter().map(|m| m.iter().copied().collect()).collect(),
            true_covs: vec![to_rows(&cov); cfg.k],
            weight_perturbation_deg: cfg.perturbation_deg,
            n_samples: cfg.n_samples,
            class_balance: balance,
            temperature: cfg.temperature,
            seed: cfg.seed,
        })
    }

    fn validate(&self) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        if !(0.0..=90.0).contains(&self.weight_perturbation_deg) {
            return Err(DotaError::Ingestion(format!(
                "perturbation must lie in [0, 90] degrees, got {}",
                self.weight_perturbation_deg
            )));
        }
        if self.true_means.len() != self.k || self.true_covs.len() != self.k || self.class_balance.len() != self.k {
            return Err(DotaError::Ingestion("means, covariances and balance must have k entries".into()));
        }
        let means: Vec<DVector<f64>> = self
            .true_means
            .iter()
            .map(|m| {
                if m.len() != self.dim {
                    Err(DotaError::Dimension { expected: self.dim, got: m.len() })
                } else {
                    Ok(DVector::from_column_slice(m))
                }
            })
            .collect::<Result<_>>()?;
        let covs: Vec<DMatrix<f64>> = self.true_covs.iter().map(|c| from_rows(c)).collect::<Result<_>>()?;
        for (k, c) in covs.iter().enumerate() {
            if c.nrows() != self.dim {
                return Err(DotaError::Dimension { expected: self.dim, got: c.nrows() });
            }
            if (c - c.transpose()).abs().max() > 1e-12 || Cholesky::new(c.clone()).is_none() {
                return Err(DotaError::Ingestion(format!("covariance of class {k} is not symmetric positive definite")));
            }
        }
        Ok((means, covs))
    }
}

/// Draws the stream, the perturbed classifier and the truth manifest.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    let (means, covs) = spec.validate()?;
    let factors: Vec<DMatrix<f64>> =
        covs.iter().map(|c| Cholesky::new(c.clone()).expect("validated").unpack()).collect();
    // separate stream from the one that drew the parameters
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0F_D0DA);
    let theta = spec.weight_perturbation_deg.to_radians();
    let weights: Vec<Vec<f32>> = means
        .iter()
        .map(|mu| {
            let u = orthogonal_direction(&mut rng, mu, &means);
            let w = mu * theta.cos() + u * theta.sin();
            w.iter().map(|&v| v as f32).collect()
        })
        .collect();

    let picker = WeightedIndex::new(&spec.class_balance)
        .map_err(|e| DotaError::Ingestion(format!("invalid class balance: {e}")))?;
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let k = picker.sample(&mut rng);
        loop {
            let x = &means[k] + &factors[k] * gaussian_vec(&mut rng, spec.dim);
            let norm = x.norm();
            if norm > 1e-6 {
                records.push(RawRecord {
                    id: format!("s{i:06}"),
                    values: x.iter().map(|v| (v / norm) as f32).collect(),
                    label: Some(k as u32),
                    asset_uri: None,
                });
                break;
            }
        }
    }
    let names = class_names(spec.k);
    Ok(SynthOutput {
        records,
        classifier: RawClassifier { class_names: names.clone(), weights, temperature: spec.temperature as f32 },
        truth: TruthManifest { class_names: names, spec: spec.clone() },
    })
}

/// `n` raw (unnormalized) draws from class `class` of the generator.
pub fn sample_class(spec: &SynthSpec, class: usize, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let (means, covs) = spec.validate()?;
    if class >= spec.k {
        return Err(DotaError::Dimension { expected: spec.k, got: class });
    }
    let factor = Cholesky::new(covs[class].clone()).expect("validated").unpack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| &means[class] + &factor * gaussian_vec(&mut rng, spec.dim)).collect())
}

/// Accuracy of the exact Gaussian posterior (uniform prior) under the true
/// parameters, evaluated on the same normalized vectors the engine sees.
pub fn bayes_oracle_accuracy(records: &[EmbeddingRecord], truth: &TruthManifest) -> Result<f64> {
    let (means, covs) = truth.spec.validate()?;
    if records.is_empty() {
        return Err(DotaError::Empty("bayes oracle needs samples"));
    }
    let precisions: Vec<(DMatrix<f64>, f64)> = covs
        .iter()
        .map(|c| {
            let chol = Cholesky::new(c.clone()).expect("validated");
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (chol.inverse(), logdet)
        })
        .collect();
    let mut hits = 0usize;
    for r in records {
        if r.dim() != truth.spec.dim {
            return Err(DotaError::Compatibility(format!(
                "record {:?} has dimension {}, manifest has {}",
                r.id,
                r.dim(),
                truth.spec.dim
            )));
        }
        let label = r.true_label.filter(|&l| l < truth.spec.k).ok_or_else(|| {
            DotaError::Compatibility(format!("record {:?} has no label valid for the manifest", r.id))
        })?;
        let scores: Vec<f64> = means
            .iter()
            .zip(&precisions)
            .map(|(mu, (p, logdet))| {
                let d = &r.embedding - mu;
                -0.5 * d.dot(&(p * &d)) - 0.5 * logdet
            })
            .collect();
        hits += usize::from(argmax(&scores) == label);
    }
    Ok(hits as f64 / records.len() as f64)
}
