//! Seeded synthetic multi-modal datasets and the on-disk bundle layout.
//!
//! Each class owns one Gaussian prototype per modality; samples are drawn
//! around it with a per-modality spread. Sample `i` belongs to class
//! `i mod k`, and all modalities of a sample share that identity.
//!
//! The query and retrieval samples together form the online stream, cut
//! into fixed-size batches in ascending index order. A noise schedule can
//! corrupt one modality of each batch with additive Gaussian noise.
//!
//! A bundle directory holds `modality_<m>.amfh`, `labels.txt`, `split.txt`
//! and `stream.txt`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::KeyValueConfig;
use crate::encoder::QueryBatch;
use crate::error::{Error, Result};
use crate::io;
use crate::labels::LabelSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisePattern {
    None,
    /// Batch `b` corrupts modality `b mod M`.
    Alternate,
}

impl FromStr for NoisePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoisePattern::None),
            "alternate" => Ok(NoisePattern::Alternate),
            other => Err(Error::Parse(format!("unknown noise pattern {other:?}"))),
        }
    }
}

impl NoisePattern {
    fn as_str(self) -> &'static str {
        match self {
            NoisePattern::None => "none",
            NoisePattern::Alternate => "alternate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub modality_dims: Vec<usize>,
    /// Standard deviation of samples around their class prototype.
    pub cluster_spread: Vec<f64>,
    pub train_size: usize,
    pub query_size: usize,
    pub stream_batch_size: usize,
    pub noise_pattern: NoisePattern,
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Four classes, two modalities of 32 and 16 dimensions, 800 samples
    /// split 400 / 80 / 320.
    pub fn standard(spread: f64, seed: u64) -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 200,
            modality_dims: vec![32, 16],
            cluster_spread: vec![spread, spread],
            train_size: 400,
            query_size: 80,
            stream_batch_size: 20,
            noise_pattern: NoisePattern::None,
            noise_level: 0.0,
            seed,
        }
    }

    /// [`standard`](Self::standard) with one modality per batch corrupted.
    pub fn noisy_stream(spread: f64, noise_level: f64, seed: u64) -> Self {
        Self {
            noise_pattern: NoisePattern::Alternate,
            noise_level,
            ..Self::standard(spread, seed)
        }
    }

    /// Stream used to compare adaptive and fixed encoding: spread 1.0 with
    /// one modality per batch corrupted by noise of level 2.0.
    pub fn ablation(seed: u64) -> Self {
        Self::noisy_stream(1.0, 2.0, seed)
    }

    pub fn total_samples(&self) -> usize {
        self.num_classes * self.samples_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.samples_per_class < 1 {
            return bad("samples_per_class must be positive".into());
        }
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return bad("every modality needs a positive dimension".into());
        }
        if self.cluster_spread.len() != self.modality_dims.len() {
            return bad(format!(
                "{} spreads for {} modalities",
                self.cluster_spread.len(),
                self.modality_dims.len()
            ));
        }
        if self
            .cluster_spread
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("spreads must be finite and non-negative".into());
        }
        if self.train_size < 2 || self.query_size < 1 {
            return bad("need at least 2 training and 1 query sample".into());
        }
        if self.train_size + self.query_size >= self.total_samples() {
            return bad(format!(
                "train ({}) + query ({}) leaves no retrieval samples out of {}",
                self.train_size,
                self.query_size,
                self.total_samples()
            ));
        }
        if self.stream_batch_size < 1 {
            return bad("stream_batch_size must be positive".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad("noise_level must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn to_config(&self) -> KeyValueConfig {
        let join = |v: Vec<String>| v.join(",");
        let mut c = KeyValueConfig::default();
        c.set("classes", self.num_classes);
        c.set("samples_per_class", self.samples_per_class);
        c.set(
            "dims",
            join(self.modality_dims.iter().map(ToString::to_string).collect()),
        );
        c.set(
            "spread",
            join(
                self.cluster_spread
                    .iter()
                    .map(ToString::to_string)
                    .collect(),
            ),
        );
        c.set("train", self.train_size);
        c.set("query", self.query_size);
        c.set("batch_size", self.stream_batch_size);
        c.set("noise", self.noise_pattern.as_str());
        c.set("noise_level", self.noise_level);
        c.set("seed", self.seed);
        c
    }

    /// Reads the keys written by [`to_config`](Self::to_config); absent keys
    /// keep the values of `base`. A single spread value applies to every
    /// modality.
    pub fn from_config(c: &KeyValueConfig, base: SynthSpec) -> Result<Self> {
        let modality_dims = c.get_list("dims")?.unwrap_or(base.modality_dims);
        let mut cluster_spread = c.get_list::<f64>("spread")?.unwrap_or(base.cluster_spread);
        if cluster_spread.len() == 1 && modality_dims.len() > 1 {
            cluster_spread = vec![cluster_spread[0]; modality_dims.len()];
        }
        let spec = Self {
            num_classes: c.get_or("classes", base.num_classes)?,
            samples_per_class: c.get_or("samples_per_class", base.samples_per_class)?,
            modality_dims,
            cluster_spread,
            train_size: c.get_or("train", base.train_size)?,
            query_size: c.get_or("query", base.query_size)?,
            stream_batch_size: c.get_or("batch_size", base.stream_batch_size)?,
            noise_pattern: c.get_or("noise", base.noise_pattern)?,
            noise_level: c.get_or("noise_level", base.noise_level)?,
            seed: c.get_or("seed", base.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub retrieval: Vec<usize>,
}

impl Split {
    /// Query and retrieval indices merged in ascending order.
    pub fn online(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.query.iter().chain(&self.retrieval).copied().collect();
        set.into_iter().collect()
    }

    pub fn by_name(&self, name: &str) -> Result<Vec<usize>> {
        match name {
            "train" => Ok(self.train.clone()),
            "query" => Ok(self.query.clone()),
            "retrieval" => Ok(self.retrieval.clone()),
            "online" => Ok(self.online()),
            other => Err(Error::Invalid(format!(
                "unknown split {other:?} (expected train, query, retrieval or online)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamBatch {
    pub indices: Vec<usize>,
    pub corrupted: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    /// One `d_m × n` matrix per modality.
    pub modalities: Vec<DMatrix<f64>>,
    pub labels: LabelSet,
    pub split: Split,
    pub stream: Vec<StreamBatch>,
}

impl DatasetBundle {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.modalities.is_empty() {
            return Err(Error::Invalid("bundle has no modalities".into()));
        }
        if let Some((m, x)) = self
            .modalities
            .iter()
            .enumerate()
            .find(|(_, x)| x.ncols() != n)
        {
            return Err(Error::Shape(format!(
                "modality {m} has {} samples, labels have {n}",
                x.ncols()
            )));
        }
        let mut seen = vec![false; n];
        for &i in self
            .split
            .train
            .iter()
            .chain(&self.split.query)
            .chain(&self.split.retrieval)
        {
            if i >= n || seen[i] {
                return Err(Error::Invalid(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("split does not cover every sample".into()));
        }
        for b in &self.stream {
            if b.indices.iter().any(|&i| i >= n) {
                return Err(Error::Invalid("stream batch index out of range".into()));
            }
            if b.corrupted.is_some_and(|m| m >= self.modalities.len()) {
                return Err(Error::Invalid(
                    "stream batch corrupts an unknown modality".into(),
                ));
            }
        }
        Ok(())
    }

    /// Columns `indices` of every modality.
    pub fn features_for(&self, indices: &[usize]) -> Vec<DMatrix<f64>> {
        self.modalities
            .iter()
            .map(|x| x.select_columns(indices.iter()))
            .collect()
    }

    pub fn batch(&self, indices: &[usize], missing: &[usize]) -> QueryBatch {
        QueryBatch::complete(self.features_for(indices)).without(missing)
    }

    /// Stored stream batches, or `indices` cut into `batch_size` chunks when
    /// the bundle has no stream.
    pub fn stream_or_chunks(&self, indices: &[usize], batch_size: usize) -> Vec<StreamBatch> {
        if !self.stream.is_empty() {
            return self.stream.clone();
        }
        indices
            .chunks(batch_size.max(1))
            .map(|c| StreamBatch {
                indices: c.to_vec(),
                corrupted: None,
            })
            .collect()
    }

    pub fn store(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (m, x) in self.modalities.iter().enumerate() {
            io::store_features(x, dir.join(format!("modality_{m}.amfh")))?;
        }
        io::store_labels(&self.labels, dir.join("labels.txt"))?;
        let mut split = String::new();
        for (name, list) in [
            ("train", &self.split.train),
            ("query", &self.split.query),
            ("retrieval", &self.split.retrieval),
        ] {
            write_index_line(&mut split, name, list);
        }
        fs::write(dir.join("split.txt"), split)?;
        let mut stream = String::new();
        for b in &self.stream {
            let tag = b.corrupted.map_or("-".to_string(), |m| m.to_string());
            write_index_line(&mut stream, &tag, &b.indices);
        }
        fs::write(dir.join("stream.txt"), stream)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut modalities = Vec::new();
        loop {
            let path = dir.join(format!("modality_{}.amfh", modalities.len()));
            if !path.exists() {
                break;
            }
            modalities.push(io::load_features(path)?);
        }
        let labels = io::load_labels(dir.join("labels.txt"))?;
        let mut split = Split::default();
        for line in fs::read_to_string(dir.join("split.txt"))?.lines() {
            let (name, list) = parse_index_line(line)?;
            match name.as_str() {
                "train" => split.train = list,
                "query" => split.query = list,
                "retrieval" => split.retrieval = list,
                "" => {}
                other => return Err(Error::Parse(format!("unknown split name {other:?}"))),
            }
        }
        let mut stream = Vec::new();
        let stream_path = dir.join("stream.txt");
        if stream_path.exists() {
            for line in fs::read_to_string(stream_path)?.lines() {
                let (tag, indices) = parse_index_line(line)?;
                if tag.is_empty() {
                    continue;
                }
                let corrupted = match tag.as_str() {
                    "-" => None,
                    t => Some(
                        t.parse()
                            .map_err(|_| Error::Parse(format!("bad stream tag {t:?}")))?,
                    ),
                };
                stream.push(StreamBatch { indices, corrupted });
            }
        }
        let bundle = Self {
            modalities,
            labels,
            split,
            stream,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn write_index_line(out: &mut String, tag: &str, indices: &[usize]) {
    out.push_str(tag);
    for i in indices {
        write!(out, " {i}").unwrap();
    }
    out.push('\n');
}

fn parse_index_line(line: &str) -> Result<(String, Vec<usize>)> {
    let mut tokens = line.split_whitespace();
    let tag = tokens.next().unwrap_or("").to_string();
    let indices = tokens
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad index {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tag, indices))
}

/// Draws a bundle from `spec`. Identical specs give bit-identical bundles.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_classes;
    let n = spec.total_samples();

    let prototypes: Vec<DMatrix<f64>> = spec
        .modality_dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let class_of: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut modalities: Vec<DMatrix<f64>> = spec
        .modality_dims
        .iter()
        .zip(&spec.cluster_spread)
        .zip(&prototypes)
        .map(|((&d, &spread), proto)| {
            let mut x = DMatrix::zeros(d, n);
            for i in 0..n {
                for f in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(f, i)] = proto[(f, class_of[i])] + spread * z;
                }
            }
            x
        })
        .collect();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let split = Split {
        train: sorted(&perm[..spec.train_size]),
        query: sorted(&perm[spec.train_size..spec.train_size + spec.query_size]),
        retrieval: sorted(&perm[spec.train_size + spec.query_size..]),
    };

    let num_modalities = modalities.len();
    let stream: Vec<StreamBatch> = split
        .online()
        .chunks(spec.stream_batch_size)
        .enumerate()
        .map(|(b, chunk)| StreamBatch {
            indices: chunk.to_vec(),
            corrupted: match spec.noise_pattern {
                NoisePattern::None => None,
                NoisePattern::Alternate => Some(b % num_modalities),
            },
        })
        .collect();

    for batch in &stream {
        if let Some(m) = batch.corrupted {
            let x = &mut modalities[m];
            for &i in &batch.indices {
                for f in 0..x.nrows() {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(f, i)] += spec.noise_level * z;
                }
            }
        }
    }

    let bundle = DatasetBundle {
        modalities,
        labels: LabelSet::single(&class_of),
        split,
        stream,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            num_classes: 3,
            samples_per_class: 10,
            modality_dims: vec![4, 2],
            cluster_spread: vec![0.1, 0.2],
            train_size: 12,
            query_size: 6,
            stream_batch_size: 5,
            noise_pattern: NoisePattern::Alternate,
            noise_level: 1.0,
            seed: 4,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 5, ..small() }).unwrap();
        assert_ne!(a.modalities[0], c.modalities[0]);
    }

    #[test]
    fn split_is_a_partition() {
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(b.split.train.len(), 12);
        assert_eq!(b.split.query.len(), 6);
        assert_eq!(b.split.retrieval.len(), 12);
        assert_eq!(b.split.online().len(), 18);
        let total: usize = b.stream.iter().map(|s| s.indices.len()).sum();
        assert_eq!(total, 18);
        assert_eq!(b.stream.len(), 4);
        assert_eq!(b.stream[0].corrupted, Some(0));
        assert_eq!(b.stream[1].corrupted, Some(1));
    }

    #[test]
    fn zero_spread_collapses_classes() {
        let spec = SynthSpec {
            cluster_spread: vec![0.0, 0.0],
            noise_pattern: NoisePattern::None,
            ..small()
        };
        let b = generate_synthetic(&spec).unwrap();
        for x in &b.modalities {
            for i in 0..b.num_samples() {
                assert_eq!(x.column(i), x.column(i % 3));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SynthSpec {
            num_classes: 1,
            ..small()
        })
        .is_err());
        assert!(generate_synthetic(&SynthSpec {
            cluster_spread: vec![0.1],
            ..small()
        })
        .is_err());
        assert!(generate_synthetic(&SynthSpec {
            train_size: 30,
            ..small()
        })
        .is_err());
        assert!(generate_synthetic(&SynthSpec {
            modality_dims: vec![4, 0],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn config_round_trip() {
        let spec = small();
        let back = SynthSpec::from_config(&spec.to_config(), SynthSpec::standard(1.0, 0)).unwrap();
        assert_eq!(back, spec);
        let c = KeyValueConfig::parse("spread = 0.5\n").unwrap();
        let s = SynthSpec::from_config(&c, SynthSpec::standard(0.3, 0)).unwrap();
        assert_eq!(s.cluster_spread, vec![0.5, 0.5]);
    }

    #[test]
    fn bundle_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_synthetic(&small()).unwrap();
        b.store(dir.path()).unwrap();
        assert_eq!(DatasetBundle::load(dir.path()).unwrap(), b);
    }

    #[test]
    fn split_names() {
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(b.split.by_name("query").unwrap(), b.split.query);
        assert!(b.split.by_name("bogus").is_err());
    }
}
