use super::{MetricsError, Result};

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with row/column potentials, `O(n^3)`).
///
/// Returns `(column assigned to each row, total cost)`.
pub fn optimal_assignment(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(MetricsError::NotSquare { rows: n, cols: row.len() });
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteCost);
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }

    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of_col[col0] = row_of_col[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[row_of_col[col] - 1] = col - 1;
    }
    let total = assignment.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    Ok((assignment, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for c in 0..cost.len() {
                if !used[c] {
                    used[c] = true;
                    go(cost, row + 1, used, acc + cost[row][c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_is_optimal_for_zero_diagonal() {
        let cost: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        assert_eq!(optimal_assignment(&cost).unwrap(), (vec![0, 1, 2, 3], 0.0));
    }

    #[test]
    fn two_by_two() {
        let cost = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(optimal_assignment(&cost).unwrap(), (vec![0, 1], 2.0));
        let cost = vec![vec![5.0, 2.0], vec![2.0, 5.0]];
        assert_eq!(optimal_assignment(&cost).unwrap(), (vec![1, 0], 4.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            optimal_assignment(&[vec![1.0, 2.0]]),
            Err(MetricsError::NotSquare { rows: 1, cols: 2 })
        ));
        assert!(matches!(
            optimal_assignment(&[vec![f64::NAN]]),
            Err(MetricsError::NonFiniteCost)
        ));
        assert_eq!(optimal_assignment(&[]).unwrap(), (vec![], 0.0));
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(n in 1usize..=6, seed in proptest::collection::vec(-20i32..20, 36)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(seed[i * 6 + j])).collect()).collect();
            let (perm, total) = optimal_assignment(&cost).unwrap();
            let mut seen = perm.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(total, brute_force(&cost));
        }
    }
}
