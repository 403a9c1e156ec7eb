//! Online Gaussian discriminant analysis driven by soft responsibilities.
//!
//! Each class k keeps a mean, a confidence count `c_k` (initialized at 1, the
//! pseudo-observation sitting at the zero-shot weight `w_k`) and a covariance
//! initialized at `σ²I`. A sample `x` with responsibility `r_k` updates class k as
//!
//! ```text
//! μ_k ← (c_k μ_k + r_k x) / (c_k + r_k)
//! Σ_k ← (c_k Σ_k + r_k (x − μ_k⁻)(x − μ_k⁻)ᵀ) / (c_k + r_k)
//! c_k ← c_k + r_k
//! ```
//!
//! where `μ_k⁻` is the mean *before* this update. Scoring uses one shared
//! precision `Λ = [(1 − ε) Σ̄ + εI]⁻¹` with `Σ̄` the unweighted class average,
//! so the discriminant is `f_k(x) = −½ (x − μ_k)ᵀ Λ (x − μ_k)`. The log-determinant
//! term is identical for every class and cancels in the softmax.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DotaError, Result};
use crate::model::{AdaptConfig, ClassifierSpec, CovBackend, Posterior};

/// Sparse per-class weights attached to one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Responsibilities {
    /// `(class, weight)` pairs, ascending by class.
    entries: Vec<(usize, f64)>,
}

impl Responsibilities {
    pub fn one_hot(class: usize) -> Self {
        Self { entries: vec![(class, 1.0)] }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds from `(class, weight)` pairs. Weights must lie in `[0, 1]`.
    pub fn from_pairs(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(k, _)| k);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DotaError::Ingestion(format!("duplicate responsibility for class {}", w[0].0)));
            }
        }
        if let Some(&(k, r)) = entries.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(DotaError::Ingestion(format!("responsibility {r} for class {k} outside [0,1]")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, class: usize) -> f64 {
        self.entries
            .binary_search_by_key(&class, |&(k, _)| k)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, r)| r).sum()
    }

    /// Largest entry, lowest class on ties. `None` when no entry is positive.
    pub fn dominant(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &(k, r) in &self.entries {
            if r > 0.0 && best.is_none_or(|(_, b)| r > b) {
                best = Some((k, r));
            }
        }
        best
    }

    pub fn to_dense(&self, k: usize) -> Vec<f64> {
        let mut dense = vec![0.0; k];
        for &(c, r) in &self.entries {
            dense[c] = r;
        }
        dense
    }
}

/// Keeps the posterior entries at or above `floor`, without renormalizing.
pub fn truncate_responsibilities(p: &Posterior, floor: f64) -> Responsibilities {
    Responsibilities {
        entries: p
            .probs()
            .iter()
            .enumerate()
            .filter(|&(_, &pk)| pk >= floor)
            .map(|(k, &pk)| (k, pk))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovarianceStore {
    PerClass(Vec<DMatrix<f64>>),
    /// Sum of weighted outer products (seeded with `σ²I` at mass 1).
    Pooled { accumulator: DMatrix<f64>, mass: f64 },
}

/// Settings copied from [`AdaptConfig`] at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdaSettings {
    pub sigma2: f64,
    pub epsilon: f64,
    pub refresh_interval: u64,
    pub backend: CovBackend,
    pub freeze_covariance: bool,
}

impl From<&AdaptConfig> for GdaSettings {
    fn from(cfg: &AdaptConfig) -> Self {
        Self {
            sigma2: cfg.sigma2,
            epsilon: cfg.epsilon,
            refresh_interval: cfg.precision_refresh_interval,
            backend: cfg.cov_backend,
            freeze_covariance: cfg.freeze_covariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdaState {
    settings: GdaSettings,
    means: Vec<DVector<f64>>,
    counts: Vec<f64>,
    cov: CovarianceStore,
    /// Lower Cholesky factor `L` of the shrunk covariance, so `Λ = (L Lᵀ)⁻¹`.
    factor: DMatrix<f64>,
    step: u64,
    refreshes: u64,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) / 2.0;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `m += r · d dᵀ`. Shared by the online and batch paths so a single-sample
/// batch reproduces one online step bit for bit.
fn accumulate_outer(m: &mut DMatrix<f64>, d: &DVector<f64>, r: f64) {
    let n = d.len();
    for j in 0..n {
        let dj = d[j] * r;
        let mut col = m.column_mut(j);
        for i in 0..n {
            col[i] += d[i] * dj;
        }
    }
}

fn isotropic(dim: usize, variance: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal_element(dim, dim, variance)
}

impl GdaState {
    /// Means at the zero-shot weights, counts at 1, covariances at `σ²I`.
    pub fn init(spec: &ClassifierSpec, cfg: &AdaptConfig) -> Result<Self> {
        cfg.clone().validate()?;
        let settings = GdaSettings::from(cfg);
        let dim = spec.dim();
        let k = spec.num_classes();
        let cov = match settings.backend {
            CovBackend::PerClass => CovarianceStore::PerClass(vec![isotropic(dim, settings.sigma2); k]),
            CovBackend::Pooled => CovarianceStore::Pooled { accumulator: isotropic(dim, settings.sigma2), mass: 1.0 },
        };
        let mut state = Self {
            settings,
            means: spec.weights().to_vec(),
            counts: vec![1.0; k],
            cov,
            factor: DMatrix::zeros(dim, dim),
            step: 0,
            refreshes: 0,
        };
        state.refresh_precision()?;
        Ok(state)
    }

    pub fn settings(&self) -> &GdaSettings {
        &self.settings
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn covariance_store(&self) -> &CovarianceStore {
        &self.cov
    }

    /// Per-class covariances; `None` for the pooled backend.
    pub fn class_covariances(&self) -> Option<&[DMatrix<f64>]> {
        match &self.cov {
            CovarianceStore::PerClass(c) => Some(c),
            CovarianceStore::Pooled { .. } => None,
        }
    }

    pub fn precision_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// The shared precision `Λ`, materialized from the cached factor.
    pub fn precision(&self) -> DMatrix<f64> {
        let n = self.dim();
        let inv_l = self
            .factor
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("factor has a positive diagonal");
        let mut p = inv_l.transpose() * inv_l;
        symmetrize(&mut p);
        p
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of precision refreshes performed so far (each one passed Cholesky).
    pub fn refresh_count(&self) -> u64 {
        self.refreshes
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(DotaError::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// One online step with batch size 1.
    ///
    /// The state is left untouched on error; a failed precision refresh rolls
    /// back the touched classes.
    pub fn update(&mut self, x: &DVector<f64>, r: &Responsibilities) -> Result<()> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DotaError::Ingestion("non-finite sample in update".into()));
        }
        if let Some(&(k, _)) = r.entries().iter().find(|&&(k, _)| k >= self.num_classes()) {
            return Err(DotaError::Ingestion(format!("responsibility for unknown class {k}")));
        }

        let touched: Vec<(usize, f64)> = r.entries().iter().copied().filter(|&(_, w)| w > 0.0).collect();
        let snapshot: Vec<(usize, DVector<f64>, f64)> =
            touched.iter().map(|&(k, _)| (k, self.means[k].clone(), self.counts[k])).collect();
        let cov_snapshot = self.snapshot_cov(&touched);

        if !self.settings.freeze_covariance {
            match &mut self.cov {
                CovarianceStore::PerClass(covs) => {
                    for &(k, w) in &touched {
                        let c = self.counts[k];
                        let d = x - &self.means[k];
                        let cov = &mut covs[k];
                        cov.scale_mut(c);
                        accumulate_outer(cov, &d, w);
                        cov.unscale_mut(c + w);
                        symmetrize(cov);
                    }
                }
                CovarianceStore::Pooled { accumulator, mass } => {
                    if let Some((k, w)) = r.dominant() {
                        let d = x - &self.means[k];
                        accumulate_outer(accumulator, &d, w);
                        symmetrize(accumulator);
                        *mass += w;
                    }
                }
            }
        }
        for &(k, w) in &touched {
            let c = self.counts[k];
            let mean = (&self.means[k] * c + x * w) / (c + w);
            self.means[k] = mean;
            self.counts[k] = c + w;
        }
        self.step += 1;

        if !self.settings.freeze_covariance && self.step % self.settings.refresh_interval == 0 {
            if let Err(e) = self.refresh_precision() {
                for (k, mean, count) in snapshot {
                    self.means[k] = mean;
                    self.counts[k] = count;
                }
                self.restore_cov(cov_snapshot);
                self.step -= 1;
                return Err(e);
            }
        }
        Ok(())
    }

    fn snapshot_cov(&self, touched: &[(usize, f64)]) -> CovSnapshot {
        match &self.cov {
            CovarianceStore::PerClass(covs) => {
                CovSnapshot::PerClass(touched.iter().map(|&(k, _)| (k, covs[k].clone())).collect())
            }
            CovarianceStore::Pooled { accumulator, mass } => CovSnapshot::Pooled(accumulator.clone(), *mass),
        }
    }

    fn restore_cov(&mut self, snapshot: CovSnapshot) {
        match (&mut self.cov, snapshot) {
            (CovarianceStore::PerClass(covs), CovSnapshot::PerClass(saved)) => {
                for (k, m) in saved {
                    covs[k] = m;
                }
            }
            (CovarianceStore::Pooled { accumulator, mass }, CovSnapshot::Pooled(a, m)) => {
                *accumulator = a;
                *mass = m;
            }
            _ => unreachable!("snapshot taken from the same backend"),
        }
    }

    /// Class-averaged covariance `Σ̄` (pooled backend: accumulator / mass).
    pub fn shared_covariance(&self) -> DMatrix<f64> {
        match &self.cov {
            CovarianceStore::PerClass(covs) => {
                let mut sum = DMatrix::zeros(self.dim(), self.dim());
                for c in covs {
                    sum += c;
                }
                sum.unscale_mut(covs.len() as f64);
                sum
            }
            CovarianceStore::Pooled { accumulator, mass } => accumulator.unscale(*mass),
        }
    }

    /// Refactors `(1 − ε) Σ̄ + εI`; `Λ` is its inverse.
    pub fn refresh_precision(&mut self) -> Result<()> {
        let eps = self.settings.epsilon;
        let mut shrunk = self.shared_covariance() * (1.0 - eps);
        for i in 0..shrunk.nrows() {
            shrunk[(i, i)] += eps;
        }
        symmetrize(&mut shrunk);
        let chol = Cholesky::new(shrunk.clone()).ok_or_else(|| {
            let eig = SymmetricEigen::new(shrunk).eigenvalues;
            let min = eig.min();
            let max = eig.max();
            DotaError::Numerical(format!(
                "shrunk covariance is not positive definite (eigenvalues in [{min:e}, {max:e}], condition {:e})",
                max / min
            ))
        })?;
        self.factor = chol.unpack();
        self.refreshes += 1;
        Ok(())
    }

    /// `f_k(x) = −½ (x − μ_k)ᵀ Λ (x − μ_k)` for every class.
    pub fn discriminant_scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        // dᵀΛd = ‖L⁻¹d‖², all classes in one triangular solve
        let mut diffs = DMatrix::from_fn(self.dim(), self.num_classes(), |i, k| x[i] - self.means[k][i]);
        if !self.factor.solve_lower_triangular_mut(&mut diffs) {
            return Err(DotaError::Numerical("singular covariance factor".into()));
        }
        Ok(diffs.column_iter().map(|y| -0.5 * y.norm_squared()).collect())
    }

    pub fn posterior(&self, x: &DVector<f64>) -> Result<Posterior> {
        Ok(Posterior::from_logits(&self.discriminant_scores(x)?))
    }
}

enum CovSnapshot {
    PerClass(Vec<(usize, DMatrix<f64>)>),
    Pooled(DMatrix<f64>, f64),
}

/// Weighted batch estimate blended with the initialization pseudo-observation
/// `(w_k, σ²I)` at weight 1. Used as the reference for the online path.
pub fn batch_estimate(
    samples: &[(DVector<f64>, Responsibilities)],
    spec: &ClassifierSpec,
    cfg: &AdaptConfig,
) -> Result<GdaState> {
    if samples.is_empty() {
        return Err(DotaError::Empty("batch_estimate needs at least one sample"));
    }
    let mut state = GdaState::init(spec, cfg)?;
    let k = spec.num_classes();
    let dim = spec.dim();
    let mut mean_sums: Vec<DVector<f64>> = spec.weights().iter().map(|w| w * 1.0).collect();
    let mut mass = vec![1.0; k];
    let mut cov_sums = vec![isotropic(dim, cfg.sigma2); k];
    let mut pooled_sum = isotropic(dim, cfg.sigma2);
    let mut pooled_mass = 1.0;

    for (x, r) in samples {
        state.check_dim(x)?;
        for &(c, w) in r.entries() {
            if c >= k {
                return Err(DotaError::Ingestion(format!("responsibility for unknown class {c}")));
            }
            if w <= 0.0 {
                continue;
            }
            mean_sums[c] += x * w;
            mass[c] += w;
            if cfg.cov_backend == CovBackend::PerClass {
                accumulate_outer(&mut cov_sums[c], &(x - spec.weight(c)), w);
            }
        }
        if cfg.cov_backend == CovBackend::Pooled {
            if let Some((c, w)) = r.dominant() {
                accumulate_outer(&mut pooled_sum, &(x - spec.weight(c)), w);
                pooled_mass += w;
            }
        }
    }

    for c in 0..k {
        state.means[c] = &mean_sums[c] / mass[c];
        state.counts[c] = mass[c];
    }
    if !cfg.freeze_covariance {
        state.cov = match cfg.cov_backend {
            CovBackend::PerClass => CovarianceStore::PerClass(
                cov_sums
                    .into_iter()
                    .zip(&mass)
                    .map(|(mut s, &m)| {
                        s.unscale_mut(m);
                        symmetrize(&mut s);
                        s
                    })
                    .collect(),
            ),
            CovBackend::Pooled => {
                symmetrize(&mut pooled_sum);
                CovarianceStore::Pooled { accumulator: pooled_sum, mass: pooled_mass }
            }
        };
    }
    state.step = samples.len() as u64;
    state.refresh_precision()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::argmax;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_class_spec() -> ClassifierSpec {
        ClassifierSpec::new(vec!["a".into(), "b".into()], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.01).unwrap()
    }

    fn state_with(means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>, eps: f64) -> GdaState {
        let dim = means[0].len();
        let mut s = GdaState {
            settings: GdaSettings {
                sigma2: 0.002,
                epsilon: eps,
                refresh_interval: 1,
                backend: CovBackend::PerClass,
                freeze_covariance: false,
            },
            counts: vec![1.0; means.len()],
            means: means.into_iter().map(DVector::from_vec).collect(),
            cov: CovarianceStore::PerClass(covs),
            factor: DMatrix::zeros(dim, dim),
            step: 0,
            refreshes: 0,
        };
        s.refresh_precision().unwrap();
        s
    }

    #[test]
    fn init_matches_prior() {
        let spec = two_class_spec();
        let state = GdaState::init(&spec, &AdaptConfig::default()).unwrap();
        for (m, w) in state.means().iter().zip(spec.weights()) {
            assert_eq!(m, w);
        }
        assert_eq!(state.counts(), &[1.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.002, 0.0, 0.0, 0.002]);
        for c in state.class_covariances().unwrap() {
            assert_eq!(c, &expected);
        }
        assert_eq!(state.step(), 0);
        // [(1−ε)σ² + ε]⁻¹ on the diagonal
        let diag = 1.0 / ((1.0 - 1e-4) * 0.002 + 1e-4);
        assert!((state.precision()[(0, 0)] - diag).abs() < 1e-9 * diag);
    }

    #[test]
    fn unit_variance_init_gives_identity_precision() {
        let cfg = AdaptConfig { sigma2: 1.0, ..Default::default() };
        let state = GdaState::init(&two_class_spec(), &cfg).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((state.precision() - eye).abs().max() <= 1e-4);
    }

    #[test]
    fn pooled_init_shared_is_isotropic() {
        let cfg = AdaptConfig { cov_backend: CovBackend::Pooled, ..Default::default() };
        let state = GdaState::init(&two_class_spec(), &cfg).unwrap();
        assert_eq!(state.shared_covariance(), isotropic(2, 0.002));
    }

    #[test]
    fn truncation_examples() {
        let p = Posterior::from_probs(vec![0.9, 0.0999, 0.0001]);
        let r = truncate_responsibilities(&p, 1e-3);
        assert_eq!(r.entries(), &[(0, 0.9), (1, 0.0999)]);
        let dense = truncate_responsibilities(&p, 0.0);
        assert_eq!(dense.entries().len(), 3);
        let one_hot = Posterior::from_probs(vec![0.0, 1.0, 0.0]);
        assert_eq!(truncate_responsibilities(&one_hot, 1e-3), Responsibilities::one_hot(1));
    }

    #[test]
    fn hand_evaluated_update() {
        // K=1 is not a valid classifier, so run class 0 of a 2-class state.
        let mut s = state_with(vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![isotropic(2, 0.002); 2], 1e-4);
        s.update(&DVector::from_vec(vec![2.0, 0.0]), &Responsibilities::one_hot(0)).unwrap();
        assert_eq!(s.means()[0].as_slice(), &[1.0, 0.0]);
        let cov = &s.class_covariances().unwrap()[0];
        assert!((cov[(0, 0)] - 2.001).abs() < 1e-15);
        assert!((cov[(1, 1)] - 0.001).abs() < 1e-15);
        assert_eq!(cov[(0, 1)], 0.0);
        assert_eq!(s.counts(), &[2.0, 1.0]);
        assert_eq!(s.step(), 1);
        s.update(&DVector::from_vec(vec![2.0, 0.0]), &Responsibilities::one_hot(0)).unwrap();
        assert_eq!(s.counts()[0], 3.0);
    }

    #[test]
    fn zero_responsibility_only_advances_step() {
        let spec = two_class_spec();
        let mut s = GdaState::init(&spec, &AdaptConfig::default()).unwrap();
        let before = s.clone();
        let r = Responsibilities::from_pairs(vec![(0, 0.0), (1, 0.0)]).unwrap();
        s.update(&DVector::from_vec(vec![0.6, 0.8]), &r).unwrap();
        assert_eq!(s.means(), before.means());
        assert_eq!(s.counts(), before.counts());
        assert_eq!(s.covariance_store(), before.covariance_store());
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn update_rejects_bad_input_without_mutation() {
        let mut s = GdaState::init(&two_class_spec(), &AdaptConfig::default()).unwrap();
        let before = s.clone();
        assert!(s.update(&DVector::from_vec(vec![1.0, 0.0, 0.0]), &Responsibilities::one_hot(0)).is_err());
        assert!(s.update(&DVector::from_vec(vec![f64::NAN, 0.0]), &Responsibilities::one_hot(0)).is_err());
        assert!(s.update(&DVector::from_vec(vec![1.0, 0.0]), &Responsibilities::one_hot(5)).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn shared_covariance_is_entrywise_average() {
        let s = state_with(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]),
            ],
            1e-4,
        );
        assert_eq!(s.shared_covariance(), DMatrix::<f64>::identity(2, 2));
        assert!((s.precision() - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn diagonal_precision_small_epsilon() {
        let diag = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let s = state_with(vec![vec![0.0, 0.0]; 2], vec![diag.clone(), diag], 1e-12);
        assert!((s.precision()[(0, 0)] - 0.25).abs() < 1e-9);
        assert!((s.precision()[(1, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_covariance_is_floored_by_shrinkage() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let s = state_with(vec![vec![0.0, 0.0]; 2], vec![m.clone(), m], 1e-4);
        assert!(s.precision().iter().all(|v| v.is_finite()));
        assert!((s.precision()[(1, 1)] - 1e4).abs() < 1e-6);
        assert!((s.precision()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discriminant_examples() {
        let s = state_with(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![DMatrix::identity(2, 2); 2], 1e-4);
        let f = s.discriminant_scores(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((f[0] + 0.5).abs() < 1e-12);
        assert_eq!(f[1], 0.0);

        // Λ = diag(2,1): Σ̄ = diag(1/2, 1) with negligible shrinkage
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        let s = state_with(vec![vec![0.0, 0.0]; 2], vec![cov.clone(), cov], 1e-14);
        let f = s.discriminant_scores(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((f[0] + 1.5).abs() < 1e-9);
    }

    #[test]
    fn posterior_examples() {
        let p = Posterior::from_logits(&[0.0, -0.5]);
        let expected0 = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((p.probs()[0] - expected0).abs() < 1e-15);
        assert!((p.probs()[0] - 0.6225).abs() < 1e-4);
        assert!((p.probs()[1] - 0.3775).abs() < 1e-4);

        let s = state_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![DMatrix::identity(2, 2); 2], 1e-4);
        let x = DVector::from_vec(vec![0.5f64.sqrt(), 0.5f64.sqrt()]);
        let p = s.posterior(&x).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_det_term_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ClassifierSpec::new(
            (0..4).map(|i| format!("c{i}")).collect(),
            (0..4).map(|_| (0..6).map(|_| rng.random::<f64>() - 0.5).collect()).collect(),
            0.01,
        )
        .unwrap();
        let mut s = GdaState::init(&spec, &AdaptConfig::default()).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = crate::model::normalize(&v).unwrap();
            let p = crate::zeroshot::zs_posterior(&x, &spec).unwrap();
            s.update(&x, &truncate_responsibilities(&p, 1e-3)).unwrap();
        }
        let logdet = {
            let mut shrunk = s.shared_covariance() * (1.0 - 1e-4);
            for i in 0..6 {
                shrunk[(i, i)] += 1e-4;
            }
            Cholesky::new(shrunk).unwrap().determinant().ln()
        };
        let x = crate::model::normalize(&[0.1, 0.2, -0.3, 0.4, 0.0, 0.5]).unwrap();
        let f = s.discriminant_scores(&x).unwrap();
        let with_term: Vec<f64> = f.iter().map(|v| v - 0.5 * logdet).collect();
        let a = Posterior::from_logits(&f);
        let b = Posterior::from_logits(&with_term);
        for (pa, pb) in a.probs().iter().zip(b.probs()) {
            assert!((pa - pb).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            batch_estimate(&[], &two_class_spec(), &AdaptConfig::default()),
            Err(DotaError::Empty(_))
        ));
    }

    #[test]
    fn batch_with_no_mass_equals_init() {
        let spec = two_class_spec();
        let cfg = AdaptConfig::default();
        let init = GdaState::init(&spec, &cfg).unwrap();
        let b = batch_estimate(&[(DVector::from_vec(vec![0.6, 0.8]), Responsibilities::empty())], &spec, &cfg).unwrap();
        assert_eq!(b.means(), init.means());
        assert_eq!(b.counts(), init.counts());
        assert_eq!(b.covariance_store(), init.covariance_store());
        assert_eq!(b.precision(), init.precision());
    }

    #[test]
    fn single_sample_batch_equals_one_update_exactly() {
        let spec = two_class_spec();
        for backend in [CovBackend::PerClass, CovBackend::Pooled] {
            let cfg = AdaptConfig { cov_backend: backend, ..Default::default() };
            let x = DVector::from_vec(vec![0.6, 0.8]);
            let r = Responsibilities::from_pairs(vec![(0, 0.3), (1, 0.7)]).unwrap();
            let mut online = GdaState::init(&spec, &cfg).unwrap();
            online.update(&x, &r).unwrap();
            let batch = batch_estimate(&[(x, r)], &spec, &cfg).unwrap();
            assert_eq!(online.means(), batch.means());
            assert_eq!(online.counts(), batch.counts());
            assert_eq!(online.covariance_store(), batch.covariance_store());
        }
    }

    #[test]
    fn pooled_backend_only_takes_argmax_outer_product() {
        let spec = two_class_spec();
        let cfg = AdaptConfig { cov_backend: CovBackend::Pooled, ..Default::default() };
        let mut s = GdaState::init(&spec, &cfg).unwrap();
        let x = DVector::from_vec(vec![0.6, 0.8]);
        let r = Responsibilities::from_pairs(vec![(0, 0.3), (1, 0.7)]).unwrap();
        s.update(&x, &r).unwrap();
        let CovarianceStore::Pooled { accumulator, mass } = s.covariance_store() else { panic!() };
        assert_eq!(*mass, 1.7);
        let d = &x - spec.weight(1);
        let expected = isotropic(2, 0.002) + &d * d.transpose() * 0.7;
        assert!((accumulator - expected).abs().max() < 1e-15);
        // means and counts follow the per-class rule
        assert_eq!(s.counts(), &[1.3, 1.7]);
    }

    #[test]
    fn frozen_covariance_never_moves() {
        let spec = two_class_spec();
        let cfg = AdaptConfig { freeze_covariance: true, ..Default::default() };
        let mut s = GdaState::init(&spec, &cfg).unwrap();
        let init = s.clone();
        s.update(&DVector::from_vec(vec![0.6, 0.8]), &Responsibilities::one_hot(1)).unwrap();
        assert_eq!(s.covariance_store(), init.covariance_store());
        assert_eq!(s.precision(), init.precision());
        assert_ne!(s.means(), init.means());
    }

    #[test]
    fn refresh_interval_controls_cadence() {
        let spec = two_class_spec();
        let cfg = AdaptConfig { precision_refresh_interval: 3, ..Default::default() };
        let mut s = GdaState::init(&spec, &cfg).unwrap();
        let x = DVector::from_vec(vec![0.6, 0.8]);
        for _ in 0..7 {
            s.update(&x, &Responsibilities::one_hot(0)).unwrap();
        }
        // one at init, then steps 3 and 6
        assert_eq!(s.refresh_count(), 3);
    }

    fn random_stream(seed: u64, n: usize, k: usize, dim: usize) -> (ClassifierSpec, Vec<(DVector<f64>, Responsibilities)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ClassifierSpec::new(
            (0..k).map(|i| format!("c{i}")).collect(),
            (0..k).map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect()).collect(),
            0.01,
        )
        .unwrap();
        let samples = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
                let x = crate::model::normalize(&v).unwrap();
                let logits: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0).collect();
                let p = Posterior::from_logits(&logits);
                (x, truncate_responsibilities(&p, 1e-3))
            })
            .collect();
        (spec, samples)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn online_means_match_batch_and_counts_are_conserved(seed in 0u64..10_000, n in 1usize..60) {
            let (spec, samples) = random_stream(seed, n, 4, 5);
            let cfg = AdaptConfig::default();
            let mut online = GdaState::init(&spec, &cfg).unwrap();
            for (x, r) in &samples {
                online.update(x, r).unwrap();
            }
            let batch = batch_estimate(&samples, &spec, &cfg).unwrap();
            for (a, b) in online.means().iter().zip(batch.means()) {
                prop_assert!((a - b).norm() <= 1e-6 * b.norm());
            }
            for c in 0..4 {
                let mass: f64 = samples.iter().map(|(_, r)| r.get(c)).sum();
                prop_assert!((online.counts()[c] - 1.0 - mass).abs() <= 1e-9);
            }
            for cov in online.class_covariances().unwrap() {
                prop_assert!((cov - cov.transpose()).abs().max() <= 1e-9);
            }
            prop_assert!(Cholesky::new(online.precision().clone()).is_some());
        }
    }

    #[test]
    fn online_state_is_deterministic() {
        let (spec, samples) = random_stream(5, 200, 3, 4);
        let run = || {
            let mut s = GdaState::init(&spec, &AdaptConfig::default()).unwrap();
            for (x, r) in &samples {
                s.update(x, r).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
        // the scored classes must be consistent with discriminants
        let s = run();
        let f = s.discriminant_scores(&samples[0].0).unwrap();
        assert_eq!(s.posterior(&samples[0].0).unwrap().argmax(), argmax(&f));
        assert!(f.iter().all(|&v| v <= 0.0));
    }
}
