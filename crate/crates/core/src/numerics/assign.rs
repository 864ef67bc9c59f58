//! Minimum-cost assignment via shortest augmenting paths.

use crate::error::Error;
use crate::numerics::Matrix;
use crate::Result;

/// Solves the rectangular assignment problem for `cost` with rows <= cols.
///
/// Returns one column index per row minimizing the total cost. Ties resolve
/// deterministically (lowest column index wins along each augmenting path).
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let n = cost.rows();
    let m = cost.cols();
    if n == 0 || n > m {
        return Err(Error::DimensionMismatch(format!(
            "assignment needs 1 <= rows <= cols, got {n}x{m}"
        )));
    }
    if m > 32 {
        return Err(Error::DimensionMismatch(format!(
            "assignment supports at most 32 columns, got {m}"
        )));
    }

    // Jonker-Volgenant style dual potentials with 1-based virtual row 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut match_col = vec![0usize; m + 1]; // column -> assigned row (1-based, 0 free)

    for i in 1..=n {
        match_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if match_col[j] != 0 {
            assignment[match_col[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn total(cost: &Matrix, assign: &[usize]) -> f64 {
        assign
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.get(i, j))
            .sum()
    }

    fn brute_force(cost: &Matrix) -> f64 {
        let n = cost.rows();
        let m = cost.cols();
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        permute(&mut cols, 0, n, cost, &mut best);
        best
    }

    fn permute(cols: &mut Vec<usize>, k: usize, n: usize, cost: &Matrix, best: &mut f64) {
        if k == n {
            let t: f64 = (0..n).map(|i| cost.get(i, cols[i])).sum();
            if t < *best {
                *best = t;
            }
            return;
        }
        for i in k..cols.len() {
            cols.swap(k, i);
            permute(cols, k + 1, n, cost, best);
            cols.swap(k, i);
        }
    }

    #[test]
    fn identity_cost_picks_diagonal() {
        // Diagonal is free, everything else costs 1.
        let c = Matrix::from_rows(&[
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_five_by_five() {
        for seed in 0..20u64 {
            let mut stream = rng::stream(1000 + seed);
            let data: Vec<f64> = (0..25).map(|_| stream.random::<f64>() * 10.0).collect();
            let c = Matrix::new(5, 5, data).unwrap();
            let assign = hungarian(&c).unwrap();
            let mut seen = assign.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 5, "assignment must be a permutation");
            assert!((total(&c, &assign) - brute_force(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn rectangular_matches_brute_force() {
        for seed in 0..10u64 {
            let mut stream = rng::stream(2000 + seed);
            let data: Vec<f64> = (0..3 * 6).map(|_| stream.random::<f64>() * 5.0).collect();
            let c = Matrix::new(3, 6, data).unwrap();
            let assign = hungarian(&c).unwrap();
            assert!((total(&c, &assign) - brute_force(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn permuted_identity_recovers_permutation() {
        // cost[i][j] = 0 iff j == perm[i]; optimum must follow perm exactly.
        let perms: [&[usize]; 3] = [&[2, 0, 1, 3], &[3, 2, 1, 0], &[1, 3, 0, 2]];
        for perm in perms {
            let mut c = Matrix::zeros(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    c.set(i, j, if perm[i] == j { 0.0 } else { 1.0 });
                }
            }
            assert_eq!(hungarian(&c).unwrap(), perm.to_vec());
        }
    }

    #[test]
    fn random_permutation_costs_recovered() {
        // Embed a known permutation as the unique cheap entry per row.
        for seed in 0..100u64 {
            let mut stream = rng::stream(3000 + seed);
            let n = 2 + (stream.random::<u32>() as usize) % 7;
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = (stream.random::<u32>() as usize) % (i + 1);
                perm.swap(i, j);
            }
            let mut c = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let base = 1.0 + stream.random::<f64>();
                    c.set(i, j, if perm[i] == j { 0.0 } else { base });
                }
            }
            assert_eq!(hungarian(&c).unwrap(), perm);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = Matrix::zeros(4, 3);
        assert!(matches!(hungarian(&c), Err(Error::DimensionMismatch(_))));
    }
}
