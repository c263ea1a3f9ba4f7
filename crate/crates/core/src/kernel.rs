//! Gaussian anchor features.
//!
//! Each modality is mapped to `p` kernel similarities against anchor points
//! sampled from that modality's training columns.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Anchor count used when the caller does not choose one.
pub const DEFAULT_ANCHORS: usize = 1000;

/// Upper bound on anchor pairs inspected when estimating the kernel width.
pub const WIDTH_PAIR_BUDGET: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    /// `d × p`, one anchor per column.
    pub anchors: DMatrix<f64>,
    pub kernel_width: f64,
    pub modality_index: usize,
    pub seed: u64,
}

impl AnchorSet {
    pub fn dim(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn len(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.ncols() == 0
    }

    pub fn for_modality(mut self, modality_index: usize) -> Self {
        self.modality_index = modality_index;
        self
    }

    pub fn with_kernel_width(mut self, kernel_width: f64) -> Result<Self> {
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(Error::InvalidAnchorSet(format!(
                "kernel width must be positive and finite, got {kernel_width}"
            )));
        }
        self.kernel_width = kernel_width;
        Ok(self)
    }
}

fn column_distance(m: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    m.column(a)
        .iter()
        .zip(m.column(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean pairwise Euclidean distance among the anchors, over all pairs when
/// there are at most [`WIDTH_PAIR_BUDGET`] of them and over a seeded sample of
/// that many distinct-index pairs otherwise. Falls back to 1.0 when the
/// anchors are all identical or there is only one.
fn mean_anchor_distance(anchors: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let p = anchors.ncols();
    let total_pairs = p * p.saturating_sub(1) / 2;
    let mean = if total_pairs == 0 {
        0.0
    } else if total_pairs <= WIDTH_PAIR_BUDGET {
        let mut sum = 0.0;
        for a in 0..p {
            for b in a + 1..p {
                sum += column_distance(anchors, a, b);
            }
        }
        sum / total_pairs as f64
    } else {
        let mut sum = 0.0;
        for _ in 0..WIDTH_PAIR_BUDGET {
            let a = rng.random_range(0..p);
            let mut b = rng.random_range(0..p - 1);
            if b >= a {
                b += 1;
            }
            sum += column_distance(anchors, a, b);
        }
        sum / WIDTH_PAIR_BUDGET as f64
    };
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

/// Samples `p` distinct columns of `features` uniformly without replacement.
/// The kernel width is the mean pairwise distance among the chosen anchors.
pub fn select_anchors(features: &DMatrix<f64>, p: usize, seed: u64) -> Result<AnchorSet> {
    let n = features.ncols();
    if p < 1 {
        return Err(Error::Invalid("anchor count must be at least 1".into()));
    }
    if p > n {
        return Err(Error::InsufficientSamples {
            requested: p,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, p).into_vec();
    let anchors = features.select_columns(picked.iter());
    let kernel_width = mean_anchor_distance(&anchors, &mut rng);
    Ok(AnchorSet {
        anchors,
        kernel_width,
        modality_index: 0,
        seed,
    })
}

/// `p × n` matrix with entry `(j, i) = exp(-‖x_i - a_j‖² / (2σ²))`.
pub fn apply_kernel(features: &DMatrix<f64>, anchors: &AnchorSet) -> Result<DMatrix<f64>> {
    if features.nrows() != anchors.dim() {
        return Err(Error::Shape(format!(
            "features have dimension {}, anchors have dimension {}",
            features.nrows(),
            anchors.dim()
        )));
    }
    let sigma = anchors.kernel_width;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidAnchorSet(format!(
            "kernel width must be positive and finite, got {sigma}"
        )));
    }
    let scale = -1.0 / (2.0 * sigma * sigma);
    let p = anchors.len();
    let n = features.ncols();
    let mut out = DMatrix::<f64>::zeros(p, n);
    for i in 0..n {
        let x = features.column(i);
        for j in 0..p {
            let a = anchors.anchors.column(j);
            let sq: f64 = x.iter().zip(a.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            out[(j, i)] = (scale * sq).exp();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.5 - 2.0)
    }

    #[test]
    fn exhaustive_sampling_is_a_permutation() {
        let x = DMatrix::from_fn(2, 5, |i, j| (10 * j + i) as f64);
        let set = select_anchors(&x, 5, 11).unwrap();
        let mut firsts: Vec<i64> = set.anchors.row(0).iter().map(|&v| v as i64).collect();
        firsts.sort_unstable();
        assert_eq!(firsts, vec![0, 10, 20, 30, 40]);
    }

    #[test]
    fn anchors_are_deterministic() {
        let x = grid(4, 30);
        assert_eq!(
            select_anchors(&x, 7, 5).unwrap(),
            select_anchors(&x, 7, 5).unwrap()
        );
    }

    #[test]
    fn width_of_two_points() {
        let x = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 3.0, 0.0]);
        let set = select_anchors(&x, 2, 0).unwrap();
        assert_eq!(set.kernel_width, 3.0);
    }

    #[test]
    fn width_is_sampled_for_many_anchors() {
        let x = DMatrix::from_fn(3, 200, |i, j| ((i + 1) * j) as f64);
        let set = select_anchors(&x, 200, 1).unwrap();
        assert!(set.kernel_width > 0.0);
        assert_eq!(set, select_anchors(&x, 200, 1).unwrap());
    }

    #[test]
    fn degenerate_anchors_fall_back_to_unit_width() {
        let x = DMatrix::from_element(3, 4, 2.5);
        assert_eq!(select_anchors(&x, 3, 0).unwrap().kernel_width, 1.0);
        assert_eq!(select_anchors(&x, 1, 0).unwrap().kernel_width, 1.0);
    }

    #[test]
    fn anchor_count_errors() {
        let x = grid(2, 3);
        assert!(matches!(
            select_anchors(&x, 4, 0),
            Err(Error::InsufficientSamples {
                requested: 4,
                available: 3
            })
        ));
        assert!(select_anchors(&x, 0, 0).is_err());
    }

    #[test]
    fn kernel_reference_values() {
        let anchors = AnchorSet {
            anchors: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            kernel_width: 1.0,
            modality_index: 0,
            seed: 0,
        };
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let phi = apply_kernel(&x, &anchors).unwrap();
        assert_eq!(phi[(0, 0)], 1.0);
        // squared distance 2 = 2σ²
        assert!((phi[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_matches_double_loop() {
        let x = DMatrix::from_fn(5, 10, |i, j| ((i * 13 + j * 7) % 17) as f64 / 4.0);
        let set = select_anchors(&x, 4, 2).unwrap();
        let phi = apply_kernel(&x, &set).unwrap();
        let s2 = set.kernel_width * set.kernel_width;
        for j in 0..4 {
            for i in 0..10 {
                let mut d = 0.0;
                for f in 0..5 {
                    let diff = x[(f, i)] - set.anchors[(f, j)];
                    d += diff * diff;
                }
                let expected = (-d / (2.0 * s2)).exp();
                assert!((phi[(j, i)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_errors() {
        let x = grid(3, 4);
        let set = select_anchors(&x, 2, 0).unwrap();
        assert!(matches!(
            apply_kernel(&grid(2, 4), &set),
            Err(Error::Shape(_))
        ));
        let mut bad = set.clone();
        bad.kernel_width = 0.0;
        assert!(matches!(
            apply_kernel(&x, &bad),
            Err(Error::InvalidAnchorSet(_))
        ));
        assert!(set.with_kernel_width(-1.0).is_err());
    }
}
