//! External clustering metrics and the K-means baseline.

mod assignment;
mod kmeans;

pub use assignment::optimal_assignment;
pub use kmeans::{kmeans, KMeansResult};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} labels, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("label {label} is out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("cost matrix is not square ({rows} rows, a row of {cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite value in input")]
    NonFiniteCost,
    #[error("{len} values cannot be split into points of dimension {dim}")]
    BadDimension { len: usize, dim: usize },
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Counts of (true class, predicted cluster) co-occurrences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(y_true: &[usize], y_pred: &[usize]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
        }
        let rows = y_true.iter().max().map_or(0, |m| m + 1);
        let cols = y_pred.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            counts[t][p] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_sums,
            col_sums,
            total: y_true.len() as u64,
        })
    }
}

fn entropy(marginals: &[u64], total: f64) -> f64 {
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `2 I(U;V) / (H(U) + H(V))`, natural log.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(y_true, y_pred)?;
    if table.total == 0 {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let n = table.total as f64;
    let h_true = entropy(&table.row_sums, n);
    let h_pred = entropy(&table.col_sums, n);
    if h_true + h_pred == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate().filter(|(_, &c)| c > 0) {
            let c = c as f64;
            mi += c / n * (c * n / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
        }
    }
    Ok((2.0 * mi.max(0.0) / (h_true + h_pred)).min(1.0))
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. Unclamped, so it may be negative.
pub fn ari(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(y_true, y_pred)?;
    if table.total < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: table.total as usize,
        });
    }
    let index: f64 = table.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_true: f64 = table.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_pred: f64 = table.col_sums.iter().map(|&c| comb2(c)).sum();
    let expected = sum_true * sum_pred / comb2(table.total);
    let max_index = 0.5 * (sum_true + sum_pred);
    if max_index == expected {
        // both partitions are all-singletons or both a single cluster
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Best accuracy over one-to-one mappings of clusters to classes.
pub fn acc(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    if let Some(&label) = y_true.iter().chain(y_pred).find(|&&l| l >= k) {
        return Err(MetricsError::LabelOutOfRange { label, k });
    }
    let table = ContingencyTable::new(y_true, y_pred)?;
    // pad to k x k so absent classes or clusters become zero rows/columns
    let count = |t: usize, p: usize| table.counts.get(t).and_then(|r| r.get(p)).copied().unwrap_or(0);
    let cost: Vec<Vec<f64>> = (0..k).map(|p| (0..k).map(|t| -(count(t, p) as f64)).collect()).collect();
    let (_, total) = optimal_assignment(&cost)?;
    Ok(-total / y_true.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
}

pub fn evaluate(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        nmi: nmi(y_true, y_pred)?,
        ari: ari(y_true, y_pred)?,
        acc: acc(y_true, y_pred, k)?,
    })
}
