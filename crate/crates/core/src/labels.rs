use crate::error::{Error, Result};

/// Per-sample category sets. Single-label data is the special case where
/// every set has one element.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    sets: Vec<Vec<usize>>,
}

impl LabelSet {
    /// Sorts and deduplicates each sample's categories.
    pub fn new(sets: Vec<Vec<usize>>) -> Self {
        let sets = sets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Self { sets }
    }

    pub fn single(labels: &[usize]) -> Self {
        Self {
            sets: labels.iter().map(|&l| vec![l]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.sets.iter().map(Vec::as_slice)
    }

    /// One past the largest category index, or 0 when there are no labels.
    pub fn num_categories(&self) -> usize {
        self.sets
            .iter()
            .flat_map(|s| s.iter())
            .max()
            .map_or(0, |&m| m + 1)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            sets: indices.iter().map(|&i| self.sets[i].clone()).collect(),
        }
    }

    /// True when samples `a` of `self` and `b` of `other` share a category.
    pub fn shares_label(&self, a: usize, other: &LabelSet, b: usize) -> bool {
        let (x, y) = (&self.sets[a], &other.sets[b]);
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Checks that every sample has at least one label in `[0, k)`.
    pub fn validate(&self, k: usize) -> Result<()> {
        for (i, s) in self.sets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidLabel {
                    sample: i,
                    reason: "empty label set".into(),
                });
            }
            if let Some(&bad) = s.iter().find(|&&l| l >= k) {
                return Err(Error::InvalidLabel {
                    sample: i,
                    reason: format!("category {bad} out of range for {k} categories"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersection_rule() {
        let a = LabelSet::new(vec![vec![3, 1], vec![0]]);
        let b = LabelSet::new(vec![vec![2, 3], vec![5]]);
        assert!(a.shares_label(0, &b, 0));
        assert!(!a.shares_label(1, &b, 0));
        assert!(!a.shares_label(0, &b, 1));
    }

    #[test]
    fn validation_errors() {
        assert!(LabelSet::new(vec![vec![]]).validate(3).is_err());
        assert!(LabelSet::single(&[3]).validate(3).is_err());
        assert!(LabelSet::single(&[2]).validate(3).is_ok());
    }
}
