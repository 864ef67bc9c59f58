//! Rank correlation and histogram information estimates.

use crate::error::Error;
use crate::Result;

/// Pearson correlation of two equal-length sequences.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::ZeroVariance("first sequence".into()));
    }
    if syy <= 0.0 {
        return Err(Error::ZeroVariance("second sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mid-ranks (1-based, ties get the average of their positions).
fn midranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // Positions start..end share the value; average rank is midpoint.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::DimensionMismatch(format!(
            "spearman needs equal lengths >= 3, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&midranks(x), &midranks(y))
}

fn bin_index(v: f64, min: f64, max: f64, bins: usize) -> usize {
    // Equal-width bins over [min, max], right-closed last bin.
    let idx = ((v - min) / (max - min) * bins as f64) as usize;
    idx.min(bins - 1)
}

fn bin_sequence(x: &[f64], bins: usize, label: &str) -> Result<Vec<usize>> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::DegenerateRange(min, label.into()));
    }
    Ok(x.iter().map(|&v| bin_index(v, min, max, bins)).collect())
}

/// Plug-in entropy (nats) of a sequence binned over its own range.
pub fn binned_entropy(x: &[f64], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let idx = bin_sequence(x, bins, "entropy input")?;
    let n = x.len() as f64;
    let mut counts = vec![0usize; bins];
    for i in idx {
        counts[i] += 1;
    }
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs bins >= 2, got {bins}"
        )));
    }
    Ok(())
}

/// Plug-in mutual information (nats) of the joint histogram, each coordinate
/// binned independently over its own [min, max].
pub fn histogram_mi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "histogram_mi needs equal nonempty lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let xi = bin_sequence(x, bins, "first sequence")?;
    let yi = bin_sequence(y, bins, "second sequence")?;
    let n = x.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut row = vec![0usize; bins];
    let mut col = vec![0usize; bins];
    for (&a, &b) in xi.iter().zip(&yi) {
        joint[a * bins + b] += 1;
        row[a] += 1;
        col[b] += 1;
    }
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = row[a] as f64 / n;
            let py = col[b] as f64 / n;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    Ok(mi.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn spearman_self_and_reversed() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.7 - 3.0).collect();
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_rank_invariant_under_cube() {
        let mut stream = rng::stream(2);
        let x: Vec<f64> = (0..50).map(|_| stream.random::<f64>() * 4.0 - 2.0).collect();
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert!((spearman(&x, &cubed).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        // x has a tie; mid-rank convention gives a hand-computable value.
        let x = [1.0, 2.0, 2.0, 3.0];
        let ranks = midranks(&x);
        assert_eq!(ranks, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_zero_variance() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(spearman(&x, &y), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn mi_exact_two_by_two_joint() {
        // Joint [[0.4, 0.1], [0.1, 0.4]] realized by counts over 10 samples.
        let mut x = Vec::new();
        let mut y = Vec::new();
        let counts = [(0.0, 0.0, 4), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 4)];
        for &(a, b, c) in &counts {
            for _ in 0..c {
                x.push(a);
                y.push(b);
            }
        }
        let mi = histogram_mi(&x, &y, 2).unwrap();
        assert!((mi - 0.192745).abs() < 1e-5);
    }

    #[test]
    fn mi_self_equals_entropy() {
        let mut stream = rng::stream(3);
        let x: Vec<f64> = (0..5000).map(|_| stream.random()).collect();
        let mi = histogram_mi(&x, &x, 20).unwrap();
        let h = binned_entropy(&x, 20).unwrap();
        assert!((mi - h).abs() < 1e-10);
    }

    #[test]
    fn mi_independent_near_zero() {
        let mut stream = rng::stream(4);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| stream.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| stream.random()).collect();
        let mi = histogram_mi(&x, &y, 20).unwrap();
        assert!(mi < 0.02, "independent MI {mi} not below 0.02 nats");
    }

    #[test]
    fn mi_symmetric_and_nonnegative() {
        let mut stream = rng::stream(5);
        let x: Vec<f64> = (0..2000).map(|_| stream.random()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + 0.3 * stream.random::<f64>())
            .collect();
        let a = histogram_mi(&x, &y, 16).unwrap();
        let b = histogram_mi(&y, &x, 16).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a >= 0.0);
        let hx = binned_entropy(&x, 16).unwrap();
        let hy = binned_entropy(&y, 16).unwrap();
        assert!(a <= hx.min(hy) + 1e-12);
    }

    #[test]
    fn mi_degenerate_range() {
        let x = [2.0; 10];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert!(matches!(
            histogram_mi(&x, &y, 4),
            Err(Error::DegenerateRange(_, _))
        ));
    }
}
