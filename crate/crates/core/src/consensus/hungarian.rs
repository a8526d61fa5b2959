use crate::error::{Error, Result};

/// Minimum-cost assignment on a square matrix. Returns `perm` with row `i`
/// assigned to column `perm[i]`. Among optimal assignments the
/// lexicographically smallest `perm` is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::shape("hungarian cost matrix", &[n, n], &[n, row.len()]));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hungarian cost matrix"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let (best, _) = solve(cost);
    let total: f64 = best.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    let scale: f64 = cost.iter().flatten().map(|v| v.abs()).fold(1.0, f64::max);
    let tol = 1e-9 * scale * n as f64;

    // Fix rows in order, each to the smallest column that still admits an
    // optimal completion.
    let mut perm = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for (k, &col) in free_cols.iter().enumerate() {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub: Vec<Vec<f64>> = rest_rows
                .iter()
                .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
                .collect();
            let (_, sub_cost) = solve(&sub);
            if fixed_cost + cost[row][col] + sub_cost <= total + tol {
                chosen = Some(k);
                break;
            }
        }
        // The optimal column always qualifies, so this only trips on a bug.
        let k = chosen.expect("an optimal completion exists");
        let col = free_cols.remove(k);
        fixed_cost += cost[row][col];
        perm.push(col);
    }
    Ok(perm)
}

/// Potentials-based Kuhn–Munkres, O(n^3).
fn solve(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    (perm, total)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    /// Every permutation of `0..n` in lexicographic order.
    pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            for c in 0..n {
                if !prefix.contains(&c) {
                    prefix.push(c);
                    rec(prefix, n, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    fn cost_of(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
    }

    #[test]
    fn identity_and_reversal() {
        let n = 4;
        let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        assert_eq!(hungarian(&id).unwrap(), vec![0, 1, 2, 3]);
        let anti: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i + j == n - 1 { 0.0 } else { 1.0 }).collect())
            .collect();
        assert_eq!(hungarian(&anti).unwrap(), vec![3, 2, 1, 0]);
    }

    #[test]
    fn matches_exhaustive_search_with_lexicographic_ties() {
        let mut rng = rng_from(11, &[]);
        for n in 1..=5 {
            let perms = permutations(n);
            for trial in 0..100 {
                // Small integer costs on half the trials force many ties.
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        (0..n)
                            .map(|_| {
                                if trial % 2 == 0 {
                                    rng.random_range(0..3) as f64
                                } else {
                                    rng.random_range(-10.0..10.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                let got = hungarian(&cost).unwrap();
                let best = perms.iter().map(|p| cost_of(&cost, p)).fold(f64::INFINITY, f64::min);
                assert!((cost_of(&cost, &got) - best).abs() < 1e-9);
                let first = perms.iter().find(|p| cost_of(&cost, p) <= best + 1e-9).unwrap();
                assert_eq!(&got, first, "cost {cost:?}");
            }
        }
    }

    #[test]
    fn all_equal_costs_give_identity() {
        let cost = vec![vec![2.5; 5]; 5];
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hungarian(&[vec![0.0, 1.0], vec![1.0]]).is_err());
        assert!(hungarian(&[vec![0.0, f64::NAN], vec![1.0, 0.0]]).is_err());
        assert_eq!(hungarian(&[]).unwrap(), Vec::<usize>::new());
    }
}
