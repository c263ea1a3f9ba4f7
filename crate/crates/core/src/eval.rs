//! Hamming ranking and mean average precision.

use std::fmt::Write as _;

use crate::codes::{hamming_words, CodeMatrix};
use crate::error::{Error, Result};
use crate::labels::LabelSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedRetrieval {
    pub query_code: Vec<i8>,
    /// Database indices by ascending distance, ties by ascending index.
    pub ranked_indices: Vec<usize>,
    pub distances: Vec<u32>,
}

fn rank_words(query: &[u64], database: &CodeMatrix) -> (Vec<usize>, Vec<u32>) {
    let mut order: Vec<(u32, usize)> = (0..database.len())
        .map(|j| (hamming_words(query, database.code(j)), j))
        .collect();
    order.sort_unstable();
    order.into_iter().map(|(d, j)| (j, d)).unzip()
}

/// Ranks every database code by Hamming distance to `query`.
pub fn hamming_rank(query: &[i8], database: &CodeMatrix) -> Result<RankedRetrieval> {
    if query.len() != database.bits() {
        return Err(Error::Shape(format!(
            "query has {} bits, database codes have {}",
            query.len(),
            database.bits()
        )));
    }
    let packed = CodeMatrix::from_sign_columns(query.len(), &[query])?;
    let (ranked_indices, distances) = rank_words(packed.code(0), database);
    Ok(RankedRetrieval {
        query_code: query.to_vec(),
        ranked_indices,
        distances,
    })
}

/// Average precision over the first `cutoff` ranked results.
///
/// Returns 0 when nothing relevant appears within the cutoff.
pub fn average_precision(relevance: &[bool], cutoff: usize) -> Result<f64> {
    if cutoff < 1 || cutoff > relevance.len() {
        return Err(Error::InvalidCutoff(cutoff));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (m, &rel) in relevance[..cutoff].iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (m + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

/// Fraction of relevant results among the first `k`.
pub fn precision_at(relevance: &[bool], k: usize) -> Result<f64> {
    if k < 1 || k > relevance.len() {
        return Err(Error::InvalidCutoff(k));
    }
    Ok(relevance[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub cutoff: usize,
    pub num_queries: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>10}", "metric", "value").unwrap();
        writeln!(s, "{:<12} {:>10.6}", "mAP", self.map).unwrap();
        writeln!(s, "{:<12} {:>10}", "cutoff", self.cutoff).unwrap();
        writeln!(s, "{:<12} {:>10}", "queries", self.num_queries).unwrap();
        s
    }

    pub fn to_key_value(&self, per_query: bool) -> String {
        let mut s = String::new();
        writeln!(s, "map = {}", self.map).unwrap();
        writeln!(s, "cutoff = {}", self.cutoff).unwrap();
        writeln!(s, "num_queries = {}", self.num_queries).unwrap();
        if per_query {
            for (i, ap) in self.per_query_ap.iter().enumerate() {
                writeln!(s, "ap.{i} = {ap}").unwrap();
            }
        }
        s
    }
}

/// mAP of Hamming ranking, where a database item is relevant to a query
/// when their label sets intersect. `cutoff` defaults to the database size.
pub fn mean_average_precision(
    query_codes: &CodeMatrix,
    query_labels: &LabelSet,
    db_codes: &CodeMatrix,
    db_labels: &LabelSet,
    cutoff: Option<usize>,
) -> Result<EvalReport> {
    if query_codes.is_empty() || db_codes.is_empty() {
        return Err(Error::Invalid(
            "query and database sets must be non-empty".into(),
        ));
    }
    if query_codes.bits() != db_codes.bits() {
        return Err(Error::Shape(format!(
            "query codes have {} bits, database codes have {}",
            query_codes.bits(),
            db_codes.bits()
        )));
    }
    if query_labels.len() != query_codes.len() || db_labels.len() != db_codes.len() {
        return Err(Error::Shape("label count does not match code count".into()));
    }
    let cutoff = cutoff.unwrap_or(db_codes.len());
    if cutoff < 1 || cutoff > db_codes.len() {
        return Err(Error::InvalidCutoff(cutoff));
    }
    let per_query_ap = (0..query_codes.len())
        .map(|q| {
            let (ranked, _) = rank_words(query_codes.code(q), db_codes);
            let relevance: Vec<bool> = ranked[..cutoff]
                .iter()
                .map(|&j| query_labels.shares_label(q, db_labels, j))
                .collect();
            average_precision(&relevance, cutoff)
        })
        .collect::<Result<Vec<_>>>()?;
    let map = per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64;
    Ok(EvalReport {
        map,
        num_queries: per_query_ap.len(),
        per_query_ap,
        cutoff,
    })
}
