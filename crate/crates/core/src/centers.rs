//! Hash centers from Sylvester Hadamard matrices.
//!
//! Each category gets one column of a Hadamard matrix of order `r*`, the
//! smallest power of two covering both the code length and the number of
//! categories. When the requested code length differs from `r*` the columns
//! are pushed through a Gaussian sign projection to change their length.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codes::{sign, CodeMatrix};
use crate::error::{Error, Result};
use crate::labels::LabelSet;

/// Number of reseeded attempts after the first one when a projected table
/// fails its separation audit.
pub const LSH_RETRIES: u64 = 16;

/// Minimum average pairwise distance, as a fraction of the code length, for
/// tables produced by the sign projection.
pub const LSH_MIN_SEPARATION: f64 = 0.45;

/// Square `±1` matrix of power-of-two order, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HadamardMatrix {
    order: usize,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.order + col]
    }

    pub fn column(&self, col: usize) -> Vec<i8> {
        (0..self.order).map(|i| self.get(i, col)).collect()
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.entries[row * self.order..(row + 1) * self.order]
    }

    /// The first `k` columns packed as codes of length `order`.
    pub fn columns_as_codes(&self, k: usize) -> CodeMatrix {
        let mut out = CodeMatrix::new(self.order, k);
        for j in 0..k {
            for i in 0..self.order {
                out.set(i, j, self.get(i, j));
            }
        }
        out
    }
}

/// Canonical Sylvester matrix: `H_1 = [1]`, `H_2m = [[H_m, H_m], [H_m, -H_m]]`.
pub fn sylvester_hadamard(order: usize) -> Result<HadamardMatrix> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::InvalidOrder(order));
    }
    let mut m = 1usize;
    let mut entries = vec![1i8];
    while m < order {
        let n = 2 * m;
        let mut next = vec![0i8; n * n];
        for i in 0..m {
            for j in 0..m {
                let v = entries[i * m + j];
                next[i * n + j] = v;
                next[i * n + j + m] = v;
                next[(i + m) * n + j] = v;
                next[(i + m) * n + j + m] = -v;
            }
        }
        entries = next;
        m = n;
    }
    Ok(HadamardMatrix { order, entries })
}

/// Smallest power of two that is at least both `code_length` and
/// `num_categories`.
pub fn required_order(code_length: usize, num_categories: usize) -> usize {
    code_length.max(num_categories).max(1).next_power_of_two()
}

/// Projects every column `c` of `matrix` to `sign(Wᵀ c)` where `W` is an
/// `order × code_length` standard Gaussian matrix drawn from `seed`.
///
/// The result is a `code_length × order` sign matrix.
pub fn lsh_reduce(matrix: &HadamardMatrix, code_length: usize, seed: u64) -> Result<CodeMatrix> {
    if code_length < 1 {
        return Err(Error::InvalidLength(code_length));
    }
    let order = matrix.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major draw order.
    let proj = DMatrix::<f64>::from_row_iterator(
        order,
        code_length,
        (0..order * code_length).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let hadamard = DMatrix::<f64>::from_fn(order, order, |i, j| f64::from(matrix.get(i, j)));
    let projected = proj.transpose() * hadamard;
    let mut out = CodeMatrix::new(code_length, order);
    for (j, col) in projected.column_iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out.set(i, j, sign(v));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterMethod {
    /// Columns of the Hadamard matrix used as-is (`r == r*`).
    Exact,
    /// Columns re-dimensioned by the Gaussian sign projection.
    Lsh,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashCenterTable {
    code_length: usize,
    num_categories: usize,
    order: usize,
    seed: u64,
    method: CenterMethod,
    centers: CodeMatrix,
}

impl HashCenterTable {
    /// Assembles a table from stored parts; the centers must be
    /// `code_length × num_categories`.
    pub fn from_parts(
        order: usize,
        seed: u64,
        method: CenterMethod,
        centers: CodeMatrix,
    ) -> Result<Self> {
        if centers.bits() < 1 {
            return Err(Error::InvalidLength(centers.bits()));
        }
        if order == 0 || !order.is_power_of_two() {
            return Err(Error::InvalidOrder(order));
        }
        Ok(Self {
            code_length: centers.bits(),
            num_categories: centers.len(),
            order,
            seed,
            method,
            centers,
        })
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Order `r*` of the Hadamard matrix the centers were taken from.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Seed of the projection that produced the table. Recorded for exact
    /// tables as well, where it has no effect.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn method(&self) -> CenterMethod {
        self.method
    }

    pub fn centers(&self) -> &CodeMatrix {
        &self.centers
    }

    pub fn center(&self, category: usize) -> Vec<i8> {
        self.centers.column_signs(category)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterAudit {
    pub average: f64,
    pub minimum: u32,
    pub pairs: usize,
    pub threshold: f64,
    pub passed: bool,
}

/// Average and minimum pairwise Hamming distance between centers, checked
/// against `r/2` for exact tables and `0.45 r` for projected ones.
pub fn audit_centers(table: &HashCenterTable) -> CenterAudit {
    let k = table.num_categories;
    let r = table.code_length;
    let codes = &table.centers;
    let mut total: u64 = 0;
    let mut minimum = u32::MAX;
    for i in 0..k {
        for j in i + 1..k {
            let d = codes.hamming(i, codes, j);
            total += u64::from(d);
            minimum = minimum.min(d);
        }
    }
    let pairs = k * k.saturating_sub(1) / 2;
    if pairs == 0 {
        return CenterAudit {
            average: 0.0,
            minimum: 0,
            pairs,
            threshold: r as f64 / 2.0,
            passed: false,
        };
    }
    let (threshold, passed) = match table.method {
        CenterMethod::Exact => (r as f64 / 2.0, 2 * total >= (r as u64) * (pairs as u64)),
        CenterMethod::Lsh => (
            LSH_MIN_SEPARATION * r as f64,
            100 * total >= 45 * (r as u64) * (pairs as u64),
        ),
    };
    CenterAudit {
        average: total as f64 / pairs as f64,
        minimum,
        pairs,
        threshold,
        passed,
    }
}

/// Builds `k` hash centers of length `r`.
///
/// Uses the first `k` columns of the Sylvester matrix of order
/// [`required_order`]`(r, k)`. If that order differs from `r` the columns are
/// projected with [`lsh_reduce`]; a table failing the audit is regenerated
/// with `seed + 1`, `seed + 2`, ... for at most [`LSH_RETRIES`] retries.
pub fn build_center_table(
    code_length: usize,
    num_categories: usize,
    seed: u64,
) -> Result<HashCenterTable> {
    if code_length < 1 {
        return Err(Error::InvalidLength(code_length));
    }
    if num_categories < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 categories, got {num_categories}"
        )));
    }
    let order = required_order(code_length, num_categories);
    let hadamard = sylvester_hadamard(order)?;
    let first_k: Vec<usize> = (0..num_categories).collect();

    if code_length == order {
        let table = HashCenterTable::from_parts(
            order,
            seed,
            CenterMethod::Exact,
            hadamard.columns_as_codes(num_categories),
        )?;
        let audit = audit_centers(&table);
        if !audit.passed {
            return Err(Error::CenterSeparation {
                average: audit.average,
                threshold: audit.threshold,
                attempts: 1,
            });
        }
        return Ok(table);
    }

    let mut last = None;
    for attempt in 0..=LSH_RETRIES {
        let s = seed.wrapping_add(attempt);
        let projected = lsh_reduce(&hadamard, code_length, s)?.select(&first_k);
        let table = HashCenterTable::from_parts(order, s, CenterMethod::Lsh, projected)?;
        let audit = audit_centers(&table);
        if audit.passed {
            return Ok(table);
        }
        last = Some(audit);
    }
    let audit = last.expect("at least one attempt");
    Err(Error::CenterSeparation {
        average: audit.average,
        threshold: audit.threshold,
        attempts: (LSH_RETRIES + 1) as usize,
    })
}

/// Per-sample target codes `H*`, one column per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetCodes {
    codes: CodeMatrix,
}

impl TargetCodes {
    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn to_real(&self) -> DMatrix<f64> {
        self.codes.to_real()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Single-label samples take their category's center. Multi-label samples
/// take the per-bit sign of the mean of their centers, ties going to `+1`.
pub fn assign_target_codes(centers: &HashCenterTable, labels: &LabelSet) -> Result<TargetCodes> {
    labels.validate(centers.num_categories())?;
    let r = centers.code_length();
    let table = centers.centers();
    let mut codes = CodeMatrix::new(r, labels.len());
    for (j, set) in labels.iter().enumerate() {
        for i in 0..r {
            let votes: i32 = set.iter().map(|&c| i32::from(table.get(i, c))).sum();
            codes.set(i, j, if votes >= 0 { 1 } else { -1 });
        }
    }
    Ok(TargetCodes { codes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sylvester_small_orders() {
        assert_eq!(sylvester_hadamard(1).unwrap().entries, vec![1]);
        assert_eq!(sylvester_hadamard(2).unwrap().entries, vec![1, 1, 1, -1]);
        assert!(matches!(sylvester_hadamard(0), Err(Error::InvalidOrder(0))));
        assert!(matches!(
            sylvester_hadamard(12),
            Err(Error::InvalidOrder(12))
        ));
    }

    #[test]
    fn orthogonality_up_to_256() {
        for n in 0..=8 {
            let order = 1usize << n;
            let h = sylvester_hadamard(order).unwrap();
            for a in 0..order {
                for b in 0..order {
                    let dot: i64 = h
                        .row(a)
                        .iter()
                        .zip(h.row(b))
                        .map(|(&x, &y)| i64::from(x) * i64::from(y))
                        .sum();
                    assert_eq!(dot, if a == b { order as i64 } else { 0 });
                }
            }
        }
    }

    #[test]
    fn order_four_columns_differ_in_two_places() {
        let h = sylvester_hadamard(4).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                let diff = (0..4).filter(|&i| h.get(i, a) != h.get(i, b)).count();
                assert_eq!(diff, 2);
            }
        }
    }

    #[test]
    fn required_order_examples() {
        assert_eq!(required_order(16, 10), 16);
        assert_eq!(required_order(10, 10), 16);
        assert_eq!(required_order(128, 81), 128);
        assert_eq!(required_order(8, 81), 128);
        assert_eq!(required_order(1, 1), 1);
    }

    #[test]
    fn lsh_is_deterministic_and_binary() {
        let h = sylvester_hadamard(64).unwrap();
        let a = lsh_reduce(&h, 48, 3).unwrap();
        let b = lsh_reduce(&h, 48, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, lsh_reduce(&h, 48, 4).unwrap());
        let one = lsh_reduce(&sylvester_hadamard(1).unwrap(), 5, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.column_signs(0).iter().all(|&s| s == 1 || s == -1));
        assert!(matches!(lsh_reduce(&h, 0, 0), Err(Error::InvalidLength(0))));
    }

    #[test]
    fn lsh_handles_longer_codes() {
        let h = sylvester_hadamard(8).unwrap();
        let out = lsh_reduce(&h, 20, 1).unwrap();
        assert_eq!((out.bits(), out.len()), (20, 8));
    }

    #[test]
    fn exact_table_h16() {
        let t = build_center_table(16, 10, 99).unwrap();
        assert_eq!(t.method(), CenterMethod::Exact);
        assert_eq!(t.order(), 16);
        let h = sylvester_hadamard(16).unwrap();
        for j in 0..10 {
            assert_eq!(t.center(j), h.column(j));
        }
        let audit = audit_centers(&t);
        assert_eq!(audit.average, 8.0);
        assert_eq!(audit.minimum, 8);
        assert_eq!(audit.pairs, 45);
        assert!(audit.passed);
    }

    #[test]
    fn two_centers_at_half_length() {
        let t = build_center_table(16, 2, 0).unwrap();
        let audit = audit_centers(&t);
        assert_eq!(audit.average, 8.0);
        assert_eq!(audit.minimum, 8);
    }

    #[test]
    fn projected_table_passes_audit() {
        let t = build_center_table(48, 20, 7).unwrap();
        assert_eq!(t.method(), CenterMethod::Lsh);
        assert_eq!(t.order(), 64);
        assert_eq!((t.code_length(), t.num_categories()), (48, 20));
        let audit = audit_centers(&t);
        assert!(audit.passed);
        assert!(audit.average >= 0.45 * 48.0);
    }

    #[test]
    fn duplicate_column_fails_audit() {
        let h = sylvester_hadamard(16).unwrap();
        let mut cols: Vec<Vec<i8>> = (0..10).map(|j| h.column(j)).collect();
        cols[5] = cols[2].clone();
        let codes = CodeMatrix::from_sign_columns(16, &cols).unwrap();
        let t = HashCenterTable::from_parts(16, 0, CenterMethod::Exact, codes).unwrap();
        let audit = audit_centers(&t);
        assert!(!audit.passed);
        assert!(audit.average < 8.0);
        assert_eq!(audit.minimum, 0);
    }

    #[test]
    fn build_rejects_single_category() {
        assert!(build_center_table(16, 1, 0).is_err());
        assert!(matches!(
            build_center_table(0, 4, 0),
            Err(Error::InvalidLength(0))
        ));
    }

    #[test]
    fn single_label_passthrough() {
        let t = build_center_table(16, 10, 0).unwrap();
        let targets = assign_target_codes(&t, &LabelSet::single(&[3])).unwrap();
        assert_eq!(targets.codes().column_signs(0), t.center(3));
    }

    #[test]
    fn two_label_tie_goes_positive() {
        let codes = CodeMatrix::from_sign_columns(4, &[[1i8, 1, 1, 1], [1, 1, -1, -1]]).unwrap();
        let t = HashCenterTable::from_parts(4, 0, CenterMethod::Exact, codes).unwrap();
        let targets = assign_target_codes(&t, &LabelSet::new(vec![vec![0, 1]])).unwrap();
        assert_eq!(targets.codes().column_signs(0), vec![1, 1, 1, 1]);
    }

    #[test]
    fn three_labels_are_a_majority_vote() {
        let t = build_center_table(8, 3, 0).unwrap();
        let targets = assign_target_codes(&t, &LabelSet::new(vec![vec![0, 1, 2]])).unwrap();
        let h = sylvester_hadamard(8).unwrap();
        let expected: Vec<i8> = (0..8)
            .map(|i| {
                let plus = (0..3).filter(|&c| h.get(i, c) == 1).count();
                if plus >= 2 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        assert_eq!(targets.codes().column_signs(0), expected);
    }

    #[test]
    fn invalid_labels_rejected() {
        let t = build_center_table(8, 3, 0).unwrap();
        assert!(matches!(
            assign_target_codes(&t, &LabelSet::new(vec![vec![]])),
            Err(Error::InvalidLabel { .. })
        ));
        assert!(matches!(
            assign_target_codes(&t, &LabelSet::single(&[3])),
            Err(Error::InvalidLabel { .. })
        ));
    }
}
