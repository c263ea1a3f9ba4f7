//! Offline training: alternating closed-form updates of the per-modality
//! projections `W` and the modality weights `μ`.
//!
//! The relaxed objective is
//!
//! ```text
//! Σ_m (1/μ_m) ‖H* − W_m φ(X_m)‖²_F + δ Σ_m ‖W_m‖²_F,   Σ_m μ_m = 1.
//! ```
//!
//! With `μ` fixed each `W_m` is a ridge regression solved through a Cholesky
//! factorisation; with `W` fixed the optimal weights are proportional to the
//! residual norms.

use nalgebra::{Cholesky, DMatrix};

use crate::centers::{assign_target_codes, HashCenterTable};
use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::kernel::{apply_kernel, select_anchors, AnchorSet, DEFAULT_ANCHORS};
use crate::labels::LabelSet;

/// Lower clamp on residual norms before they are turned into weights.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub delta: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Seeds the anchor draw of every modality.
    pub seed: u64,
    /// Anchors per modality, clamped to the number of training samples.
    pub num_anchors: usize,
    /// Overrides the mean-distance kernel width heuristic.
    pub kernel_width: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            max_iters: 50,
            rel_tol: 1e-5,
            seed: 0,
            num_anchors: DEFAULT_ANCHORS,
            kernel_width: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Invalid(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::Invalid(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.num_anchors < 1 {
            return Err(Error::Invalid("anchor count must be at least 1".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!(
                    "kernel width must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    /// One `r × p` projection per modality.
    pub projections: Vec<DMatrix<f64>>,
    pub anchor_sets: Vec<AnchorSet>,
    /// Training weights `μ`, positive and summing to one.
    pub train_weights: Vec<f64>,
    pub delta: f64,
    pub code_length: usize,
    /// Objective after every accepted alternating step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
    pub center_seed: u64,
}

impl TrainedModel {
    pub fn num_modalities(&self) -> usize {
        self.projections.len()
    }

    /// `W_m φ_m(X)` for a `d_m × n` feature matrix.
    pub fn project(&self, modality: usize, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let anchors = self.anchor_sets.get(modality).ok_or_else(|| {
            Error::Shape(format!(
                "modality {modality} out of range for a {}-modality model",
                self.num_modalities()
            ))
        })?;
        let phi = apply_kernel(features, anchors)?;
        Ok(&self.projections[modality] * phi)
    }

    /// Structural consistency of a model assembled from stored parts.
    pub fn validate(&self) -> Result<()> {
        let m = self.projections.len();
        if m == 0 || self.anchor_sets.len() != m || self.train_weights.len() != m {
            return Err(Error::Shape(format!(
                "model has {} projections, {} anchor sets and {} weights",
                m,
                self.anchor_sets.len(),
                self.train_weights.len()
            )));
        }
        for (i, (w, a)) in self.projections.iter().zip(&self.anchor_sets).enumerate() {
            if w.nrows() != self.code_length || w.ncols() != a.len() {
                return Err(Error::Shape(format!(
                    "projection {i} is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    self.code_length,
                    a.len()
                )));
            }
        }
        if self.train_weights.iter().any(|&u| u.is_nan() || u <= 0.0) {
            return Err(Error::DegenerateWeight);
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&u| u.is_nan() || u <= 0.0) {
        return Err(Error::DegenerateWeight);
    }
    Ok(())
}

/// Relaxed training objective for the given state.
pub fn objective(
    projections: &[DMatrix<f64>],
    weights: &[f64],
    kernel_features: &[DMatrix<f64>],
    targets: &DMatrix<f64>,
    delta: f64,
) -> Result<f64> {
    if projections.len() != weights.len() || projections.len() != kernel_features.len() {
        return Err(Error::Shape(format!(
            "{} projections, {} weights, {} feature maps",
            projections.len(),
            weights.len(),
            kernel_features.len()
        )));
    }
    check_weights(weights)?;
    let mut total = 0.0;
    for ((w, &mu), phi) in projections.iter().zip(weights).zip(kernel_features) {
        check_product_shapes(w, phi, targets)?;
        let residual = targets - w * phi;
        total += residual.norm_squared() / mu + delta * w.norm_squared();
    }
    Ok(total)
}

fn check_product_shapes(
    w: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<()> {
    if w.ncols() != phi.nrows() || w.nrows() != targets.nrows() || phi.ncols() != targets.ncols() {
        return Err(Error::Shape(format!(
            "W is {}x{}, φ is {}x{}, H* is {}x{}",
            w.nrows(),
            w.ncols(),
            phi.nrows(),
            phi.ncols(),
            targets.nrows(),
            targets.ncols()
        )));
    }
    Ok(())
}

/// Frobenius norms `‖H* − W_m φ_m‖` for every modality.
pub fn residual_norms(
    projections: &[DMatrix<f64>],
    kernel_features: &[DMatrix<f64>],
    targets: &DMatrix<f64>,
) -> Vec<f64> {
    projections
        .iter()
        .zip(kernel_features)
        .map(|(w, phi)| (targets - w * phi).norm())
        .collect()
}

/// Minimiser of the `m`-th term over `W` for fixed weight `μ`:
/// `W = (1/μ) H* φᵀ ((1/μ) φ φᵀ + δ I)⁻¹`, solved without forming the inverse.
pub fn update_projection(
    targets: &DMatrix<f64>,
    kernel_features: &DMatrix<f64>,
    weight: f64,
    delta: f64,
) -> Result<DMatrix<f64>> {
    if weight.is_nan() || weight <= 0.0 {
        return Err(Error::DegenerateWeight);
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Invalid(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let phi = kernel_features;
    if phi.ncols() != targets.ncols() {
        return Err(Error::Shape(format!(
            "φ has {} samples, H* has {}",
            phi.ncols(),
            targets.ncols()
        )));
    }
    let inv_mu = 1.0 / weight;
    let p = phi.nrows();
    let mut gram = phi * phi.transpose() * inv_mu;
    for i in 0..p {
        gram[(i, i)] += delta;
    }
    // W A = B with A symmetric, so A Wᵀ = Bᵀ.
    let rhs = phi * targets.transpose() * inv_mu;
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Numerical("regularised Gram matrix is not positive definite".into())
    })?;
    let wt = chol.solve(&rhs);
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "projection solve produced non-finite values".into(),
        ));
    }
    Ok(wt.transpose())
}

/// Optimal simplex weights `μ_m = G_m / Σ G`, each norm clamped below at
/// [`RESIDUAL_FLOOR`].
pub fn update_weights(residual_norms: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = residual_norms
        .iter()
        .map(|&g| g.max(RESIDUAL_FLOOR))
        .collect();
    let total: f64 = clamped.iter().sum();
    clamped.iter().map(|g| g / total).collect()
}

/// Sign of `Σ_m s_m P_m` over the given projected features and scales.
pub(crate) fn fuse_signs(projected: &[DMatrix<f64>], scales: &[f64]) -> CodeMatrix {
    let mut iter = projected.iter().zip(scales);
    let (first, &s0) = iter.next().expect("at least one modality");
    let mut acc = first * s0;
    for (p, &s) in iter {
        acc += p * s;
    }
    CodeMatrix::from_real(&acc)
}

/// Trains projections and weights on `M` paired modalities.
pub fn fit(
    features: &[DMatrix<f64>],
    labels: &LabelSet,
    centers: &HashCenterTable,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let m_count = features.len();
    if m_count == 0 {
        return Err(Error::Invalid("at least one modality is required".into()));
    }
    let n = features[0].ncols();
    if let Some((m, f)) = features.iter().enumerate().find(|(_, f)| f.ncols() != n) {
        return Err(Error::Shape(format!(
            "modality {m} has {} samples, modality 0 has {n}",
            f.ncols()
        )));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }

    let targets = assign_target_codes(centers, labels)?.to_real();
    let p = config.num_anchors.min(n);
    let mut anchor_sets = Vec::with_capacity(m_count);
    let mut phis = Vec::with_capacity(m_count);
    for (m, x) in features.iter().enumerate() {
        let mut set = select_anchors(x, p, config.seed)?.for_modality(m);
        if let Some(width) = config.kernel_width {
            set = set.with_kernel_width(width)?;
        }
        phis.push(apply_kernel(x, &set)?);
        anchor_sets.push(set);
    }

    let mut weights = vec![1.0 / m_count as f64; m_count];
    let mut projections: Vec<DMatrix<f64>> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iters {
        let next_w = phis
            .iter()
            .zip(&weights)
            .map(|(phi, &mu)| update_projection(&targets, phi, mu, config.delta))
            .collect::<Result<Vec<_>>>()?;
        let next_mu = update_weights(&residual_norms(&next_w, &phis, &targets));
        let value = objective(&next_w, &next_mu, &phis, &targets, config.delta)?;

        match trace.last().copied() {
            // Rounding at the fixed point can nudge the value upwards; the
            // previous state is kept.
            Some(prev) if value > prev => {
                converged = true;
                break;
            }
            Some(prev) => {
                projections = next_w;
                weights = next_mu;
                trace.push(value);
                if (prev - value) / prev.abs().max(f64::MIN_POSITIVE) < config.rel_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                projections = next_w;
                weights = next_mu;
                trace.push(value);
            }
        }
    }

    Ok(TrainedModel {
        projections,
        anchor_sets,
        train_weights: weights,
        delta: config.delta,
        code_length: centers.code_length(),
        objective_trace: trace,
        converged,
        seed: config.seed,
        center_seed: centers.seed(),
    })
}

/// Codes from the training-weight fusion `sgn(Σ_m (1/μ_m) W_m φ_m(X_m))`.
pub fn fuse_encode_fixed(model: &TrainedModel, features: &[DMatrix<f64>]) -> Result<CodeMatrix> {
    if features.len() != model.num_modalities() {
        return Err(Error::Shape(format!(
            "{} feature matrices for a {}-modality model",
            features.len(),
            model.num_modalities()
        )));
    }
    check_weights(&model.train_weights)?;
    let n = features[0].ncols();
    if features.iter().any(|f| f.ncols() != n) {
        return Err(Error::Shape(
            "modalities disagree on the sample count".into(),
        ));
    }
    let projected = features
        .iter()
        .enumerate()
        .map(|(m, x)| model.project(m, x))
        .collect::<Result<Vec<_>>>()?;
    let scales: Vec<f64> = model.train_weights.iter().map(|u| 1.0 / u).collect();
    Ok(fuse_signs(&projected, &scales))
}
