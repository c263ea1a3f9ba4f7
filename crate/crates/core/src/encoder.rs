//! Online encoding of newly arriving multi-modal batches.
//!
//! For each batch the codes `B` and per-batch weights `μ_q` are optimised
//! alternately against the frozen projections:
//!
//! ```text
//! min Σ_m (1/μ_m) ‖B − W_m φ(X_m)‖²_F   s.t. Σ μ_m = 1, B ∈ {−1, +1}^{r × n_q}
//! ```
//!
//! Modalities absent from a batch get weight zero and drop out of the sums.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::trainer::{fuse_signs, update_weights, TrainedModel};

#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    features: Vec<Option<DMatrix<f64>>>,
}

impl QueryBatch {
    /// `None` marks a modality missing for the whole batch.
    pub fn new(features: Vec<Option<DMatrix<f64>>>) -> Self {
        Self { features }
    }

    pub fn complete(features: Vec<DMatrix<f64>>) -> Self {
        Self::new(features.into_iter().map(Some).collect())
    }

    /// Drops the listed modalities.
    pub fn without(mut self, missing: &[usize]) -> Self {
        for &m in missing {
            if let Some(slot) = self.features.get_mut(m) {
                *slot = None;
            }
        }
        self
    }

    pub fn num_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Option<DMatrix<f64>>] {
        &self.features
    }

    pub fn is_present(&self, modality: usize) -> bool {
        matches!(self.features.get(modality), Some(Some(_)))
    }

    /// Column count of the present modalities, or 0 when none is present.
    pub fn batch_size(&self) -> usize {
        self.features
            .iter()
            .flatten()
            .map(|f| f.ncols())
            .next()
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    Adaptive,
    Fixed,
}

impl FromStr for EncodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(EncodeMode::Adaptive),
            "fixed" => Ok(EncodeMode::Fixed),
            other => Err(Error::Parse(format!("unknown encode mode {other:?}"))),
        }
    }
}

impl fmt::Display for EncodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodeMode::Adaptive => "adaptive",
            EncodeMode::Fixed => "fixed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeResult {
    pub codes: CodeMatrix,
    /// One weight per model modality; exactly zero for missing ones.
    pub dynamic_weights: Vec<f64>,
    pub iterations: usize,
    /// Batch objective after every accepted code update.
    pub objective_trace: Vec<f64>,
}

/// Present modalities of a batch paired with their projections `W_m φ(X_m)`.
struct Projected {
    modalities: Vec<usize>,
    values: Vec<DMatrix<f64>>,
}

fn project_batch(model: &TrainedModel, batch: &QueryBatch) -> Result<Projected> {
    if batch.num_modalities() != model.num_modalities() {
        return Err(Error::Shape(format!(
            "batch has {} modality slots, model has {}",
            batch.num_modalities(),
            model.num_modalities()
        )));
    }
    let mut modalities = Vec::new();
    let mut values = Vec::new();
    let mut n_q = None;
    for (m, slot) in batch.features.iter().enumerate() {
        if let Some(x) = slot {
            match n_q {
                None => n_q = Some(x.ncols()),
                Some(n) if n != x.ncols() => {
                    return Err(Error::Shape(format!(
                        "modality {m} has {} columns, expected {n}",
                        x.ncols()
                    )))
                }
                Some(_) => {}
            }
            modalities.push(m);
            values.push(model.project(m, x)?);
        }
    }
    if modalities.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(Projected { modalities, values })
}

/// `Σ_m (1/μ_m) ‖B − P_m‖²_F` over the given projections.
pub fn encoding_objective(
    codes: &DMatrix<f64>,
    projected: &[DMatrix<f64>],
    weights: &[f64],
) -> f64 {
    projected
        .iter()
        .zip(weights)
        .map(|(p, &mu)| (codes - p).norm_squared() / mu)
        .sum()
}

fn residual_norms(codes: &DMatrix<f64>, projected: &[DMatrix<f64>]) -> Vec<f64> {
    projected.iter().map(|p| (codes - p).norm()).collect()
}

fn spread_weights(model: &TrainedModel, proj: &Projected, present: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; model.num_modalities()];
    for (&m, &w) in proj.modalities.iter().zip(present) {
        full[m] = w;
    }
    full
}

/// Alternates the weight update `μ_m ∝ ‖B − P_m‖` and the code update
/// `B = sgn(Σ_m P_m / μ_m)`, starting from uniform weights.
///
/// Stops when the codes stop changing, when the objective's relative
/// decrease falls below `rel_tol`, or after `max_iters` code updates.
pub fn encode_adaptive(
    model: &TrainedModel,
    batch: &QueryBatch,
    options: &EncodeOptions,
) -> Result<EncodeResult> {
    if options.max_iters < 1 {
        return Err(Error::Invalid("max_iters must be at least 1".into()));
    }
    let proj = project_batch(model, batch)?;
    let k = proj.values.len();
    let mut weights = vec![1.0 / k as f64; k];
    let scales: Vec<f64> = weights.iter().map(|u| 1.0 / u).collect();
    let mut codes = fuse_signs(&proj.values, &scales);
    let mut dense = codes.to_real();
    let mut trace = vec![encoding_objective(&dense, &proj.values, &weights)];
    let mut iterations = 1;

    while iterations < options.max_iters {
        let next_weights = update_weights(&residual_norms(&dense, &proj.values));
        let scales: Vec<f64> = next_weights.iter().map(|u| 1.0 / u).collect();
        let next_codes = fuse_signs(&proj.values, &scales);
        weights = next_weights;
        if next_codes == codes {
            break;
        }
        codes = next_codes;
        dense = codes.to_real();
        let value = encoding_objective(&dense, &proj.values, &weights);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(value);
        iterations += 1;
        if (prev - value) / prev.abs().max(f64::MIN_POSITIVE) < options.rel_tol {
            break;
        }
    }

    Ok(EncodeResult {
        codes,
        dynamic_weights: spread_weights(model, &proj, &weights),
        iterations,
        objective_trace: trace,
    })
}

/// One code update with the training weights restricted to the present
/// modalities and renormalised.
pub fn encode_fixed(model: &TrainedModel, batch: &QueryBatch) -> Result<EncodeResult> {
    let proj = project_batch(model, batch)?;
    let restricted: Vec<f64> = proj
        .modalities
        .iter()
        .map(|&m| model.train_weights[m])
        .collect();
    if restricted.iter().any(|&u| u.is_nan() || u <= 0.0) {
        return Err(Error::DegenerateWeight);
    }
    let total: f64 = restricted.iter().sum();
    let weights: Vec<f64> = restricted.iter().map(|u| u / total).collect();
    let scales: Vec<f64> = weights.iter().map(|u| 1.0 / u).collect();
    let codes = fuse_signs(&proj.values, &scales);
    let value = encoding_objective(&codes.to_real(), &proj.values, &weights);
    Ok(EncodeResult {
        codes,
        dynamic_weights: spread_weights(model, &proj, &weights),
        iterations: 1,
        objective_trace: vec![value],
    })
}

pub fn encode_batch(
    model: &TrainedModel,
    batch: &QueryBatch,
    mode: EncodeMode,
    options: &EncodeOptions,
) -> Result<EncodeResult> {
    match mode {
        EncodeMode::Adaptive => encode_adaptive(model, batch, options),
        EncodeMode::Fixed => encode_fixed(model, batch),
    }
}

/// Encodes batches independently in arrival order. A failing batch yields an
/// `Err` in its slot and does not stop the stream.
pub fn encode_stream<'a, I>(
    model: &TrainedModel,
    batches: I,
    mode: EncodeMode,
    options: &EncodeOptions,
) -> Vec<Result<EncodeResult>>
where
    I: IntoIterator<Item = &'a QueryBatch>,
{
    batches
        .into_iter()
        .map(|b| encode_batch(model, b, mode, options))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centers::build_center_table;
    use crate::labels::LabelSet;
    use crate::trainer::{fit, fuse_encode_fixed, TrainConfig};

    fn data(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, LabelSet) {
        let mut s = seed;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = DMatrix::from_fn(d, n, |i, j| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let noise = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            let proto = ((labels[j] * 5 + i * 3) % 7) as f64 - 3.0;
            proto + 0.4 * noise
        });
        (x, LabelSet::single(&labels))
    }

    fn model(m: usize) -> (TrainedModel, Vec<DMatrix<f64>>) {
        let (x, labels) = data(45, 4, 1);
        let (y, _) = data(45, 6, 2);
        let feats: Vec<_> = [x, y].into_iter().take(m).collect();
        let centers = build_center_table(8, 3, 0).unwrap();
        (
            fit(&feats, &labels, &centers, &TrainConfig::default()).unwrap(),
            feats,
        )
    }

    #[test]
    fn single_modality_is_one_code_update() {
        let (model, feats) = model(1);
        let batch = QueryBatch::complete(vec![feats[0].columns(0, 5).into_owned()]);
        let res = encode_adaptive(&model, &batch, &EncodeOptions::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.dynamic_weights, vec![1.0]);
        let expected = CodeMatrix::from_real(
            &model
                .project(0, &feats[0].columns(0, 5).into_owned())
                .unwrap(),
        );
        assert_eq!(res.codes, expected);
        assert_eq!(encode_fixed(&model, &batch).unwrap().codes, expected);
    }

    #[test]
    fn fixed_matches_training_fusion() {
        let (model, feats) = model(2);
        let batch = QueryBatch::complete(feats.clone());
        let res = encode_fixed(&model, &batch).unwrap();
        assert_eq!(res.codes, fuse_encode_fixed(&model, &feats).unwrap());
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn fixed_renormalises_over_present_modalities() {
        let (mut model, feats) = model(2);
        model.train_weights = vec![0.3, 0.7];
        let batch = QueryBatch::complete(feats.clone()).without(&[1]);
        let res = encode_fixed(&model, &batch).unwrap();
        assert_eq!(res.dynamic_weights, vec![1.0, 0.0]);
    }

    #[test]
    fn missing_modality_gets_zero_weight() {
        let (model, feats) = model(2);
        let batch = QueryBatch::complete(feats.clone()).without(&[0]);
        let res = encode_adaptive(&model, &batch, &EncodeOptions::default()).unwrap();
        assert_eq!(res.dynamic_weights, vec![0.0, 1.0]);
        assert_eq!(
            res.codes,
            CodeMatrix::from_real(&model.project(1, &feats[1]).unwrap())
        );
    }

    #[test]
    fn empty_and_mismatched_batches() {
        let (model, feats) = model(2);
        let none = QueryBatch::new(vec![None, None]);
        assert!(matches!(
            encode_adaptive(&model, &none, &EncodeOptions::default()),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            encode_fixed(&model, &none),
            Err(Error::EmptyBatch)
        ));
        let ragged = QueryBatch::complete(vec![
            feats[0].columns(0, 3).into_owned(),
            feats[1].columns(0, 4).into_owned(),
        ]);
        assert!(matches!(
            encode_fixed(&model, &ragged),
            Err(Error::Shape(_))
        ));
        let wrong_dim = QueryBatch::complete(vec![feats[1].clone(), feats[1].clone()]);
        assert!(matches!(
            encode_fixed(&model, &wrong_dim),
            Err(Error::Shape(_))
        ));
        let too_few = QueryBatch::complete(vec![feats[0].clone()]);
        assert!(matches!(
            encode_fixed(&model, &too_few),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn adaptive_trace_is_monotone() {
        let (model, feats) = model(2);
        for start in 0..9 {
            let batch = QueryBatch::complete(
                feats
                    .iter()
                    .map(|f| f.columns(start * 5, 5).into_owned())
                    .collect(),
            );
            let res = encode_adaptive(&model, &batch, &EncodeOptions::default()).unwrap();
            assert!(res.iterations <= 30);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
            let total: f64 = res.dynamic_weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_is_stateless_and_tolerates_failures() {
        let (model, feats) = model(2);
        let good =
            QueryBatch::complete(feats.iter().map(|f| f.columns(0, 6).into_owned()).collect());
        let bad = QueryBatch::new(vec![None, None]);
        let out = encode_stream(
            &model,
            [&good, &bad, &good],
            EncodeMode::Adaptive,
            &EncodeOptions::default(),
        );
        assert_eq!(out.len(), 3);
        assert!(out[1].is_err());
        assert_eq!(out[0].as_ref().unwrap(), out[2].as_ref().unwrap());
        assert!(encode_stream(
            &model,
            std::iter::empty(),
            EncodeMode::Fixed,
            &EncodeOptions::default()
        )
        .is_empty());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "adaptive".parse::<EncodeMode>().unwrap(),
            EncodeMode::Adaptive
        );
        assert_eq!("fixed".parse::<EncodeMode>().unwrap(), EncodeMode::Fixed);
        assert!("other".parse::<EncodeMode>().is_err());
    }
}
