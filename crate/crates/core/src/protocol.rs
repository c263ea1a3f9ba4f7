//! End-to-end experiment drivers shared by the CLI and the benchmark:
//! train on a bundle's training split, encode its online stream, evaluate
//! the query split against the retrieval split.

use crate::centers::{build_center_table, HashCenterTable};
use crate::codes::CodeMatrix;
use crate::encoder::{encode_batch, EncodeMode, EncodeOptions, EncodeResult};
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, EvalReport};
use crate::synth::{DatasetBundle, StreamBatch};
use crate::trainer::{fit, TrainConfig, TrainedModel};

/// δ values swept by [`sweep_delta`] by default.
pub const DELTA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub bits: usize,
    pub train: TrainConfig,
    pub center_seed: u64,
    pub mode: EncodeMode,
    pub encode: EncodeOptions,
    /// Chunk size for bundles without a stored stream.
    pub batch_size: usize,
    pub cutoff: Option<usize>,
    pub missing: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bits: 16,
            train: TrainConfig::default(),
            center_seed: 0,
            mode: EncodeMode::Adaptive,
            encode: EncodeOptions::default(),
            batch_size: 20,
            cutoff: None,
            missing: Vec::new(),
        }
    }
}

/// Codes for a set of samples, addressable by sample index.
#[derive(Clone, Debug)]
pub struct EncodedSamples {
    codes: CodeMatrix,
    position: Vec<Option<usize>>,
    pub batches: Vec<(StreamBatch, EncodeResult)>,
}

impl EncodedSamples {
    pub fn codes_for(&self, indices: &[usize]) -> Result<CodeMatrix> {
        let cols = indices
            .iter()
            .map(|&i| {
                self.position
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Invalid(format!("sample {i} was not encoded")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.codes.select(&cols))
    }
}

pub fn train_on_bundle(
    bundle: &DatasetBundle,
    cfg: &PipelineConfig,
) -> Result<(HashCenterTable, TrainedModel)> {
    let k = bundle.labels.num_categories().max(2);
    let centers = build_center_table(cfg.bits, k, cfg.center_seed)?;
    let train = &bundle.split.train;
    let model = fit(
        &bundle.features_for(train),
        &bundle.labels.select(train),
        &centers,
        &cfg.train,
    )?;
    Ok((centers, model))
}

/// Encodes each batch independently; the first failing batch aborts.
pub fn encode_batches(
    model: &TrainedModel,
    bundle: &DatasetBundle,
    batches: &[StreamBatch],
    mode: EncodeMode,
    options: &EncodeOptions,
    missing: &[usize],
) -> Result<EncodedSamples> {
    let mut codes = CodeMatrix::new(model.code_length, 0);
    let mut position = vec![None; bundle.num_samples()];
    let mut out = Vec::with_capacity(batches.len());
    for batch in batches {
        let result = encode_batch(model, &bundle.batch(&batch.indices, missing), mode, options)?;
        for (offset, &i) in batch.indices.iter().enumerate() {
            position[i] = Some(codes.len() + offset);
        }
        codes.extend(&result.codes)?;
        out.push((batch.clone(), result));
    }
    Ok(EncodedSamples {
        codes,
        position,
        batches: out,
    })
}

pub fn evaluate_encoded(
    bundle: &DatasetBundle,
    encoded: &EncodedSamples,
    cutoff: Option<usize>,
) -> Result<EvalReport> {
    let q = &bundle.split.query;
    let db = &bundle.split.retrieval;
    mean_average_precision(
        &encoded.codes_for(q)?,
        &bundle.labels.select(q),
        &encoded.codes_for(db)?,
        &bundle.labels.select(db),
        cutoff,
    )
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub centers: HashCenterTable,
    pub model: TrainedModel,
    pub encoded: EncodedSamples,
    pub report: EvalReport,
}

pub fn run_pipeline(bundle: &DatasetBundle, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let (centers, model) = train_on_bundle(bundle, cfg)?;
    let batches = bundle.stream_or_chunks(&bundle.split.online(), cfg.batch_size);
    let encoded = encode_batches(
        &model,
        bundle,
        &batches,
        cfg.mode,
        &cfg.encode,
        &cfg.missing,
    )?;
    let report = evaluate_encoded(bundle, &encoded, cfg.cutoff)?;
    Ok(PipelineOutcome {
        centers,
        model,
        encoded,
        report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub delta: f64,
    pub map: f64,
    pub iterations: usize,
}

/// Retrains and re-evaluates for every δ.
pub fn sweep_delta(
    bundle: &DatasetBundle,
    cfg: &PipelineConfig,
    deltas: &[f64],
) -> Result<Vec<SweepPoint>> {
    deltas
        .iter()
        .map(|&delta| {
            let mut c = cfg.clone();
            c.train.delta = delta;
            let out = run_pipeline(bundle, &c)?;
            Ok(SweepPoint {
                delta,
                map: out.report.map,
                iterations: out.model.objective_trace.len(),
            })
        })
        .collect()
}

/// Max minus min mAP over a sweep.
pub fn sweep_range(points: &[SweepPoint]) -> f64 {
    let max = points
        .iter()
        .map(|p| p.map)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|p| p.map).fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub adaptive_map: f64,
    pub fixed_map: f64,
    /// Batches that had a corrupted modality.
    pub corrupted_batches: usize,
    /// Of those, batches where the corrupted modality got the largest
    /// adaptive weight.
    pub corrupted_heaviest: usize,
    /// Adaptive weights per batch, in stream order.
    pub adaptive_weights: Vec<Vec<f64>>,
    pub fixed_weights: Vec<Vec<f64>>,
}

impl AblationReport {
    pub fn corrupted_heaviest_fraction(&self) -> f64 {
        if self.corrupted_batches == 0 {
            0.0
        } else {
            self.corrupted_heaviest as f64 / self.corrupted_batches as f64
        }
    }
}

/// Trains once, then encodes the online stream in adaptive and in fixed
/// mode and compares retrieval quality.
pub fn ablate(bundle: &DatasetBundle, cfg: &PipelineConfig) -> Result<AblationReport> {
    let (_, model) = train_on_bundle(bundle, cfg)?;
    let batches = bundle.stream_or_chunks(&bundle.split.online(), cfg.batch_size);
    let adaptive = encode_batches(
        &model,
        bundle,
        &batches,
        EncodeMode::Adaptive,
        &cfg.encode,
        &cfg.missing,
    )?;
    let fixed = encode_batches(
        &model,
        bundle,
        &batches,
        EncodeMode::Fixed,
        &cfg.encode,
        &cfg.missing,
    )?;

    let mut corrupted_batches = 0;
    let mut corrupted_heaviest = 0;
    for (batch, res) in &adaptive.batches {
        if let Some(m) = batch.corrupted {
            corrupted_batches += 1;
            let w = &res.dynamic_weights;
            if w.iter().enumerate().all(|(j, &v)| j == m || w[m] > v) {
                corrupted_heaviest += 1;
            }
        }
    }
    Ok(AblationReport {
        adaptive_map: evaluate_encoded(bundle, &adaptive, cfg.cutoff)?.map,
        fixed_map: evaluate_encoded(bundle, &fixed, cfg.cutoff)?.map,
        corrupted_batches,
        corrupted_heaviest,
        adaptive_weights: adaptive
            .batches
            .iter()
            .map(|(_, r)| r.dynamic_weights.clone())
            .collect(),
        fixed_weights: fixed
            .batches
            .iter()
            .map(|(_, r)| r.dynamic_weights.clone())
            .collect(),
    })
}
