//! Pairwise similarities, pair selection, and the pairwise clustering loss.
//!
//! The loss over a batch is the mean, over selected ordered off-diagonal
//! pairs `(i, j)`, of
//!
//! ```text
//! -positive(i,j) * ln S(i,j) - lambda * negative(i,j) * ln(1 - S(i,j))
//! ```
//!
//! with `S` clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]`.

use crate::nn::FeatureMatrix;

pub const CLAMP_EPS: f64 = 1e-7;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("feature row {row} has norm {norm}, expected 1")]
    NotNormalized { row: usize, norm: f64 },
    #[error("feature row {0} has a negative entry")]
    NegativeFeature(usize),
    #[error("label {label} is out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("thresholds must satisfy 0 <= l < u <= 1 (got u={u}, l={l})")]
    BadThresholds { u: f64, l: f64 },
    #[error("matrix sizes disagree: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("lambda must be non-negative and finite, got {0}")]
    BadLambda(f64),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

/// Symmetric `m x m` cosine-similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// # Panics
    /// If `values.len() != size * size`.
    pub fn from_vec(size: usize, values: Vec<f64>) -> Self {
        assert_eq!(size * size, values.len());
        SimilarityMatrix { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Positive / negative pair indicators, both `m x m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMatrices {
    size: usize,
    positive: Vec<bool>,
    negative: Vec<bool>,
}

impl PairMatrices {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn positive(&self, i: usize, j: usize) -> bool {
        self.positive[i * self.size + j]
    }

    pub fn negative(&self, i: usize, j: usize) -> bool {
        self.negative[i * self.size + j]
    }

    /// Ordered off-diagonal pairs that are positive or negative.
    pub fn selected_pairs(&self) -> usize {
        (0..self.size)
            .flat_map(|i| (0..self.size).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && (self.positive(i, j) || self.negative(i, j)))
            .count()
    }

    pub fn off_diagonal_pairs(&self) -> usize {
        self.size * self.size.saturating_sub(1)
    }
}

/// `S = F F^T` for rows that are non-negative unit vectors.
pub fn similarity_matrix(features: &FeatureMatrix) -> Result<SimilarityMatrix> {
    for (row, values) in features.iter_rows().enumerate() {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(LossError::NotNormalized { row, norm });
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(LossError::NegativeFeature(row));
        }
    }
    let m = features.rows();
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            // Rounding can push a unit row's self-product just past 1.
            let dot = features.row(i).iter().zip(features.row(j)).map(|(a, b)| a * b).sum::<f64>().min(1.0);
            values[i * m + j] = dot;
            values[j * m + i] = dot;
        }
    }
    Ok(SimilarityMatrix { size: m, values })
}

/// Gradient with respect to the features given the gradient with respect to
/// `S = F F^T`: `dF = (dS + dS^T) F`.
pub fn similarity_backward(features: &FeatureMatrix, d_similarity: &[f64]) -> Vec<f64> {
    let (m, k) = (features.rows(), features.cols());
    assert_eq!(d_similarity.len(), m * m);
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let row = &mut out[i * k..][..k];
        for j in 0..m {
            let w = d_similarity[i * m + j] + d_similarity[j * m + i];
            if w != 0.0 {
                row.iter_mut().zip(features.row(j)).for_each(|(o, f)| *o += w * f);
            }
        }
    }
    out
}

/// Same-class pairs are positive, all others negative.
pub fn pairs_from_labels(labels: &[usize], k: usize) -> Result<PairMatrices> {
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(LossError::LabelOutOfRange { label, k });
    }
    let m = labels.len();
    let positive: Vec<bool> = labels.iter().flat_map(|a| labels.iter().map(move |b| a == b)).collect();
    let negative = positive.iter().map(|p| !p).collect();
    Ok(PairMatrices { size: m, positive, negative })
}

/// Pairs with `S >= u` are positive, pairs with `S <= l` negative; anything
/// in between is left unselected.
pub fn pairs_from_similarity(s: &SimilarityMatrix, u: f64, l: f64) -> Result<PairMatrices> {
    if !(0.0 <= l && l < u && u <= 1.0) {
        return Err(LossError::BadThresholds { u, l });
    }
    Ok(PairMatrices {
        size: s.size,
        positive: s.values.iter().map(|&v| v >= u).collect(),
        negative: s.values.iter().map(|&v| v <= l).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLoss {
    pub loss: f64,
    /// `m x m`, zero on the diagonal, on unselected pairs and where clamped.
    pub grad: Vec<f64>,
    /// Number of ordered off-diagonal pairs that entered the mean.
    pub selected: usize,
}

pub fn pairwise_loss(s: &SimilarityMatrix, pairs: &PairMatrices, lambda: f64) -> Result<PairwiseLoss> {
    if s.size != pairs.size {
        return Err(LossError::SizeMismatch(s.size, pairs.size));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LossError::BadLambda(lambda));
    }
    let m = s.size;
    let selected = pairs.selected_pairs();
    let mut grad = vec![0.0; m * m];
    if selected == 0 {
        return Ok(PairwiseLoss { loss: 0.0, grad, selected });
    }
    let denom = selected as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            let idx = i * m + j;
            let raw = s.values[idx];
            let clamped = raw.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            let interior = raw > CLAMP_EPS && raw < 1.0 - CLAMP_EPS;
            if pairs.positive[idx] {
                total -= clamped.ln();
                if interior {
                    grad[idx] -= 1.0 / (clamped * denom);
                }
            }
            if pairs.negative[idx] {
                total -= lambda * (1.0 - clamped).ln();
                if interior {
                    grad[idx] += lambda / ((1.0 - clamped) * denom);
                }
            }
        }
    }
    Ok(PairwiseLoss {
        loss: total / denom,
        grad,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn features(rows: &[&[f64]]) -> FeatureMatrix {
        let cols = rows[0].len();
        FeatureMatrix::from_vec(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    fn sim(values: &[f64]) -> SimilarityMatrix {
        let m = (values.len() as f64).sqrt() as usize;
        SimilarityMatrix::from_vec(m, values.to_vec())
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&features(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 1.0]);
        let s = similarity_matrix(&features(&[&[0.6, 0.8], &[0.6, 0.8]])).unwrap();
        assert!(s.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let h = 0.5f64.sqrt();
        let s = similarity_matrix(&features(&[&[h, h], &[1.0, 0.0]])).unwrap();
        assert!((s.get(0, 1) - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn similarity_rejects_bad_rows() {
        assert!(matches!(
            similarity_matrix(&features(&[&[1.0, 1.0]])),
            Err(LossError::NotNormalized { row: 0, .. })
        ));
        assert!(matches!(
            similarity_matrix(&features(&[&[1.0, 0.0], &[-1.0, 0.0]])),
            Err(LossError::NegativeFeature(1))
        ));
    }

    #[test]
    fn label_pairs() {
        let p = pairs_from_labels(&[0, 0, 1], 2).unwrap();
        let pos: Vec<bool> = (0..9).map(|x| p.positive(x / 3, x % 3)).collect();
        assert_eq!(pos, [true, true, false, true, true, false, false, false, true]);
        assert!((0..9).all(|x| p.negative(x / 3, x % 3) == !pos[x]));

        let p = pairs_from_labels(&[2, 2, 2], 3).unwrap();
        assert!((0..9).all(|x| p.positive(x / 3, x % 3) && !p.negative(x / 3, x % 3)));

        let p = pairs_from_labels(&[0, 1, 2], 3).unwrap();
        assert!((0..9).all(|x| p.positive(x / 3, x % 3) == (x / 3 == x % 3)));

        assert_eq!(pairs_from_labels(&[0, 3], 3), Err(LossError::LabelOutOfRange { label: 3, k: 3 }));
    }

    #[test]
    fn threshold_pairs() {
        let s = sim(&[1.0, 0.96, 0.50, 0.96, 1.0, 0.80, 0.50, 0.80, 1.0]);
        let p = pairs_from_similarity(&s, 0.95, 0.7).unwrap();
        assert!(p.positive(0, 1) && !p.negative(0, 1));
        assert!(p.negative(0, 2) && !p.positive(0, 2));
        assert!(!p.negative(1, 2) && !p.positive(1, 2));
        assert_eq!(p.selected_pairs(), 4);

        let p = pairs_from_similarity(&s, 1.0, 0.7).unwrap();
        assert!(p.positive(0, 0) && !p.positive(0, 1));

        let ident = similarity_matrix(&features(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let p = pairs_from_similarity(&ident, 0.95, 0.7).unwrap();
        assert!(p.positive(0, 0) && p.positive(1, 1) && !p.positive(0, 1));
        assert!(p.negative(0, 1) && p.negative(1, 0) && !p.negative(0, 0));

        assert!(matches!(pairs_from_similarity(&s, 0.5, 0.5), Err(LossError::BadThresholds { .. })));
    }

    #[test]
    fn loss_examples() {
        let s = sim(&[1.0, 0.5, 0.5, 1.0]);
        let p = pairs_from_labels(&[0, 0], 1).unwrap();
        for lambda in [0.0, 0.1, 100.0] {
            let out = pairwise_loss(&s, &p, lambda).unwrap();
            assert!((out.loss - 0.693147).abs() < 1e-6);
            assert_eq!(out.selected, 2);
        }

        let e = CLAMP_EPS;
        let s = sim(&[1.0, 1.0 - e, e, 1.0 - e, 1.0, e, e, e, 1.0]);
        let p = pairs_from_labels(&[0, 0, 1], 2).unwrap();
        assert!(pairwise_loss(&s, &p, 0.1).unwrap().loss < 1e-6);
        // the clamp floor scales with the negative weight: (2e + 4 * 100e) / 6
        let floor = pairwise_loss(&s, &p, 100.0).unwrap().loss;
        assert!((floor - (2.0 * e + 400.0 * e) / 6.0).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_is_positive_only_mean() {
        let s = sim(&[1.0, 0.9, 0.2, 0.9, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let p = pairs_from_labels(&[0, 0, 1], 2).unwrap();
        let out = pairwise_loss(&s, &p, 0.0).unwrap();
        assert!((out.loss - (-2.0 * 0.9f64.ln()) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn no_selected_pairs_is_zero() {
        let s = sim(&[1.0, 0.8, 0.8, 1.0]);
        let p = pairs_from_similarity(&s, 0.95, 0.7).unwrap();
        let out = pairwise_loss(&s, &p, 1.0).unwrap();
        assert_eq!((out.loss, out.selected), (0.0, 0));
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn similarity_backward_matches_finite_differences() {
        let h = 0.5f64.sqrt();
        let f = features(&[&[h, h, 0.0], &[0.6, 0.0, 0.8], &[0.0, 1.0, 0.0]]);
        let ds: Vec<f64> = (0..9).map(|v| (v as f64 * 0.7).sin()).collect();
        let objective = |vals: &[f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|c| vals[i * 3 + c] * vals[j * 3 + c]).sum();
                    total += ds[i * 3 + j] * dot;
                }
            }
            total
        };
        let analytic = similarity_backward(&f, &ds);
        for p in 0..9 {
            let mut plus = f.values().to_vec();
            let mut minus = plus.clone();
            plus[p] += 1e-6;
            minus[p] -= 1e-6;
            let fd = (objective(&plus) - objective(&minus)) / 2e-6;
            assert!((fd - analytic[p]).abs() < 1e-8);
        }
    }

    fn unit_rows(m: usize, k: usize) -> impl Strategy<Value = FeatureMatrix> {
        proptest::collection::vec(0.01f64..1.0, m * k).prop_map(move |mut v| {
            for row in v.chunks_mut(k) {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.iter_mut().for_each(|x| *x /= n);
            }
            FeatureMatrix::from_vec(m, k, v)
        })
    }

    fn random_similarity(m: usize) -> impl Strategy<Value = SimilarityMatrix> {
        proptest::collection::vec(0.0f64..1.0, m * m).prop_map(move |v| {
            let mut out = v.clone();
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] = if i == j { 1.0 } else { v[i.min(j) * m + i.max(j)] };
                }
            }
            SimilarityMatrix::from_vec(m, out)
        })
    }

    proptest! {
        #[test]
        fn threshold_selection_monotone(s in random_similarity(6), l in 0.0f64..0.5, u in 0.5f64..0.99, du in 0.0f64..0.01, dl in 0.0f64..0.2) {
            let p = pairs_from_similarity(&s, u, l).unwrap();
            let higher_u = pairs_from_similarity(&s, u + du, l).unwrap();
            let lower_l = pairs_from_similarity(&s, u, (l - dl).max(0.0)).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!(!(p.positive(i, j) && p.negative(i, j)));
                    prop_assert!(!higher_u.positive(i, j) || p.positive(i, j));
                    prop_assert!(!lower_l.negative(i, j) || p.negative(i, j));
                    prop_assert_eq!(p.positive(i, j), p.positive(j, i));
                }
            }
        }

        #[test]
        fn label_pairs_form_equivalence(labels in proptest::collection::vec(0usize..4, 1..10)) {
            let p = pairs_from_labels(&labels, 4).unwrap();
            let m = labels.len();
            for i in 0..m {
                prop_assert!(p.positive(i, i));
                for j in 0..m {
                    prop_assert_eq!(p.positive(i, j), p.positive(j, i));
                    for t in 0..m {
                        if p.positive(i, j) && p.positive(j, t) {
                            prop_assert!(p.positive(i, t));
                        }
                    }
                }
            }
        }

        #[test]
        fn loss_is_nonnegative_and_monotone(s in random_similarity(5), labels in proptest::collection::vec(0usize..2, 5), lambda in 0.0f64..10.0) {
            let p = pairs_from_labels(&labels, 2).unwrap();
            let base = pairwise_loss(&s, &p, lambda).unwrap();
            prop_assert!(base.loss >= 0.0);
            for i in 0..5 {
                for j in 0..5 {
                    if i == j { continue; }
                    let v = s.get(i, j);
                    if v <= 1e-3 || v >= 1.0 - 1e-3 { continue; }
                    let mut bumped = s.values().to_vec();
                    bumped[i * 5 + j] = v + 1e-4;
                    let out = pairwise_loss(&SimilarityMatrix::from_vec(5, bumped), &p, lambda).unwrap();
                    if p.positive(i, j) {
                        prop_assert!(out.loss < base.loss);
                    } else if lambda > 0.0 {
                        prop_assert!(out.loss > base.loss);
                    }
                }
            }
        }

        #[test]
        fn similarity_is_symmetric_unit_diagonal(f in unit_rows(5, 3)) {
            let s = similarity_matrix(&f).unwrap();
            for i in 0..5 {
                prop_assert!((s.get(i, i) - 1.0).abs() < 1e-9);
                for j in 0..5 {
                    prop_assert_eq!(s.get(i, j), s.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&s.get(i, j)));
                }
            }
        }
    }
}
