//! Numerical checks of the recombination theory: additive energies as a
//! product of experts, closure of code sets under blockwise recombination,
//! pairwise mutual-information contraction, and expected state-space
//! coverage of discretized rollouts.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Matrix;
use crate::recombine::MaskPolicy;
use crate::rng;
use crate::Result;

const PMF_TOL: f64 = 1e-12;

/// Joint PMF of one latent pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteJoint {
    pmf: Matrix,
}

impl DiscreteJoint {
    pub fn new(pmf: Matrix) -> Result<Self> {
        if pmf.data().iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidPmf("negative probability entry".into()));
        }
        let total: f64 = pmf.data().iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidPmf(format!(
                "joint sums to {total}, expected 1 within {PMF_TOL:e}"
            )));
        }
        Ok(Self { pmf })
    }

    pub fn pmf(&self) -> &Matrix {
        &self.pmf
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        (0..self.pmf.rows())
            .map(|i| self.pmf.row(i).iter().sum())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        (0..self.pmf.cols())
            .map(|j| self.pmf.column(j).iter().sum())
            .collect()
    }

    /// Plug-in mutual information in nats, with 0·ln 0 = 0.
    pub fn mutual_information(&self) -> f64 {
        let rows = self.row_marginal();
        let cols = self.col_marginal();
        let mut mi = 0.0;
        for i in 0..self.pmf.rows() {
            for j in 0..self.pmf.cols() {
                let p = self.pmf.get(i, j);
                if p > 0.0 {
                    mi += p * (p / (rows[i] * cols[j])).ln();
                }
            }
        }
        mi.max(0.0)
    }
}

/// Tabulated energies on a shared strictly increasing 1-D grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergySet {
    grid: Vec<f64>,
    energies: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EnergySet {
    pub fn new(grid: Vec<f64>, energies: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "energy grid must be strictly increasing with at least 2 points".into(),
            ));
        }
        if energies.is_empty() || energies.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "need equally many energies and weights, got {} and {}",
                energies.len(),
                weights.len()
            )));
        }
        for (k, e) in energies.iter().enumerate() {
            if e.len() != grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "energy {k} has {} values on a {}-point grid",
                    e.len(),
                    grid.len()
                )));
            }
            if let Some(i) = e.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEvaluation(i));
            }
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig("energy weights must be nonnegative".into()));
        }
        Ok(Self {
            grid,
            energies,
            weights,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

fn normalize_density(grid: &[f64], mut values: Vec<f64>) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDensity);
    }
    let z = trapezoid(grid, &values);
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::NonFiniteDensity);
    }
    for v in &mut values {
        *v /= z;
    }
    Ok(values)
}

/// Max pointwise gap between the normalized additive-energy density
/// exp(−Σ_k α_k E_k) and the normalized product Π p_k^{α_k} of the
/// individually normalized expert densities.
pub fn poe_check(es: &EnergySet) -> Result<f64> {
    let n = es.grid.len();
    let mut additive = vec![0.0; n];
    for (e, &w) in es.energies.iter().zip(&es.weights) {
        for i in 0..n {
            additive[i] += w * e[i];
        }
    }
    let additive = normalize_density(&es.grid, additive.iter().map(|v| (-v).exp()).collect())?;

    let mut product = vec![1.0; n];
    for (e, &w) in es.energies.iter().zip(&es.weights) {
        let p_k = normalize_density(&es.grid, e.iter().map(|v| (-v).exp()).collect())?;
        for i in 0..n {
            product[i] *= p_k[i].powf(w);
        }
    }
    let product = normalize_density(&es.grid, product)?;

    Ok(additive
        .iter()
        .zip(&product)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// A discrete code: one symbol per block.
pub type BlockCode = Vec<u32>;

/// Closes a code set under single-coordinate recombination and returns the
/// fixpoint, which equals the Cartesian product of per-block projections.
pub fn closure_complete(codes: &[BlockCode]) -> Result<BTreeSet<BlockCode>> {
    let mut set: BTreeSet<BlockCode> = codes.iter().cloned().collect();
    let Some(k) = codes.first().map(Vec::len) else {
        return Ok(set);
    };
    if codes.iter().any(|c| c.len() != k) {
        return Err(Error::DimensionMismatch(
            "all codes must share the same block count".into(),
        ));
    }
    loop {
        let snapshot: Vec<BlockCode> = set.iter().cloned().collect();
        let before = set.len();
        for a in &snapshot {
            for b in &snapshot {
                for coord in 0..k {
                    let mut c = b.clone();
                    c[coord] = a[coord];
                    set.insert(c);
                }
            }
        }
        if set.len() == before {
            return Ok(set);
        }
    }
}

/// Exact MI of the α-mixture of a joint with its product of marginals,
/// against the contraction bound α·MI.
///
/// The inequality lhs ≤ bound is a theorem; a violation beyond rounding
/// indicates a broken PMF computation, so it is asserted here.
pub fn mi_contraction(joint: &DiscreteJoint, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "mixture weight must lie in [0, 1], got {alpha}"
        )));
    }
    let rows = joint.row_marginal();
    let cols = joint.col_marginal();
    let mut mixed = joint.pmf.clone();
    for i in 0..mixed.rows() {
        for j in 0..mixed.cols() {
            let blended = alpha * joint.pmf.get(i, j) + (1.0 - alpha) * rows[i] * cols[j];
            mixed.set(i, j, blended);
        }
    }
    let lhs = DiscreteJoint { pmf: mixed }.mutual_information();
    let bound = alpha * joint.mutual_information();
    assert!(
        lhs <= bound + PMF_TOL,
        "MI contraction violated: {lhs} > {bound}"
    );
    Ok((lhs, bound))
}

/// Pr[Sᵢ = Sⱼ] under the given mask policy.
pub fn mask_alpha(policy: MaskPolicy, k: usize, i: usize, j: usize) -> Result<f64> {
    if i == j || i >= k || j >= k {
        return Err(Error::InvalidConfig(format!(
            "need distinct coordinates below {k}, got {i} and {j}"
        )));
    }
    match policy {
        MaskPolicy::IidHalf => Ok(0.5),
        MaskPolicy::Proper => {
            if k < 2 {
                return Err(Error::InvalidMaskPolicy {
                    policy: policy.name().into(),
                    min_k: 2,
                    k,
                });
            }
            let total = (1u64 << k) - 2;
            let agree = (1..(1u64 << k) - 1)
                .filter(|code| (code >> i) & 1 == (code >> j) & 1)
                .count();
            Ok(agree as f64 / total as f64)
        }
    }
}

/// Probability over discretized rollout outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinDistribution {
    q: Vec<f64>,
}

impl BinDistribution {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidPmf("bin distribution must be nonempty".into()));
        }
        if q.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidPmf("negative bin probability".into()));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidPmf(format!(
                "bin probabilities sum to {total}, expected 1 within {PMF_TOL:e}"
            )));
        }
        Ok(Self { q })
    }

    pub fn uniform(bins: usize) -> Result<Self> {
        Self::new(vec![1.0 / bins as f64; bins.max(1)])
    }

    pub fn point_mass(bins: usize, index: usize) -> Result<Self> {
        if index >= bins {
            return Err(Error::InvalidConfig(format!(
                "point mass index {index} outside {bins} bins"
            )));
        }
        let mut q = vec![0.0; bins];
        q[index] = 1.0;
        Self::new(q)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn bins(&self) -> usize {
        self.q.len()
    }
}

/// Expected number of distinct bins visited by n independent rollouts.
pub fn expected_coverage(q: &BinDistribution, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("coverage needs at least one rollout".into()));
    }
    if n == 1 {
        // Σ_b q_b = 1 by construction; the formula reduces to it exactly.
        return Ok(1.0);
    }
    Ok(q.q.iter().map(|&p| 1.0 - (1.0 - p).powi(n as i32)).sum())
}

/// Monte Carlo mean of distinct visited bins over independent trials.
pub fn coverage_sim(q: &BinDistribution, n: usize, trials: usize, seed: u64) -> Result<f64> {
    if n == 0 || trials == 0 {
        return Err(Error::InvalidConfig(
            "coverage simulation needs n ≥ 1 and trials ≥ 1".into(),
        ));
    }
    let mut stream = rng::stream(seed);
    let mut total = 0.0;
    let mut visited = vec![false; q.bins()];
    for _ in 0..trials {
        visited.fill(false);
        for _ in 0..n {
            let mut u: f64 = stream.random();
            let mut bin = q.bins() - 1;
            for (b, &p) in q.q.iter().enumerate() {
                if u < p {
                    bin = b;
                    break;
                }
                u -= p;
            }
            visited[bin] = true;
        }
        total += visited.iter().filter(|&&v| v).count() as f64;
    }
    Ok(total / trials as f64)
}

/// Interpolating family: one failure bin losing mass as λ grows while the
/// success mass concentrates onto fewer bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedUFamily {
    pub bins: usize,
    pub failure_mass_lo_lambda: f64,
    pub failure_mass_hi_lambda: f64,
    pub concentration_lo_lambda: f64,
    pub concentration_hi_lambda: f64,
}

impl Default for InvertedUFamily {
    fn default() -> Self {
        Self {
            bins: 12,
            failure_mass_lo_lambda: 0.9,
            failure_mass_hi_lambda: 0.05,
            concentration_lo_lambda: 0.0,
            concentration_hi_lambda: 5.0,
        }
    }
}

impl InvertedUFamily {
    /// Bin distribution at λ ∈ [0, 1]: bin 0 carries the failure mass,
    /// the rest share the success mass with exponentially decaying weights.
    pub fn at(&self, lambda: f64) -> Result<BinDistribution> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "family parameter must lie in [0, 1], got {lambda}"
            )));
        }
        if self.bins < 3 {
            return Err(Error::InvalidConfig(format!(
                "family needs at least 3 bins, got {}",
                self.bins
            )));
        }
        let failure =
            self.failure_mass_lo_lambda + lambda * (self.failure_mass_hi_lambda - self.failure_mass_lo_lambda);
        let kappa = self.concentration_lo_lambda
            + lambda * (self.concentration_hi_lambda - self.concentration_lo_lambda);
        if !(0.0..=1.0).contains(&failure) {
            return Err(Error::InvalidConfig(format!(
                "failure mass {failure} outside [0, 1] at λ = {lambda}"
            )));
        }
        let success_bins = self.bins - 1;
        let weights: Vec<f64> = (0..success_bins)
            .map(|r| (-kappa * r as f64 / (success_bins - 1) as f64).exp())
            .collect();
        let weight_sum: f64 = weights.iter().sum();
        let mut q = Vec::with_capacity(self.bins);
        q.push(failure);
        for w in weights {
            q.push((1.0 - failure) * w / weight_sum);
        }
        BinDistribution::new(q)
    }
}

/// One coverage evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub lambda: f64,
    pub coverage: f64,
}

/// Coverage-vs-λ table with the argmax location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<CoveragePoint>,
    pub argmax_index: usize,
    /// True when the family is flat over the grid and no interior-argmax
    /// assertion applies.
    pub constant: bool,
}

pub const COVERAGE_CSV_HEADER: &str = "lambda,expected_coverage";

impl CoverageTable {
    pub fn csv(&self) -> String {
        let mut out = String::from(COVERAGE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.lambda, r.coverage));
        }
        out
    }
}

/// Evaluates expected coverage over a λ grid.
///
/// For a non-constant family the interior argmax is asserted; a flat table
/// is flagged instead.
pub fn inverted_u_demo(
    family: &InvertedUFamily,
    lambda_grid: &[f64],
    n: usize,
) -> Result<CoverageTable> {
    if lambda_grid.len() < 3 {
        return Err(Error::InvalidConfig(
            "inverted-U demo needs at least 3 grid points".into(),
        ));
    }
    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let coverage = expected_coverage(&family.at(lambda)?, n)?;
        rows.push(CoveragePoint { lambda, coverage });
    }
    let argmax_index = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.coverage.total_cmp(&b.1.coverage))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let max = rows[argmax_index].coverage;
    let min = rows.iter().map(|r| r.coverage).fold(f64::INFINITY, f64::min);
    let constant = max - min < 1e-12;
    if !constant {
        assert!(
            argmax_index > 0 && argmax_index + 1 < rows.len(),
            "coverage argmax sits on the grid boundary at λ = {}",
            rows[argmax_index].lambda
        );
        assert!(rows[argmax_index].coverage > rows[0].coverage);
        assert!(rows[argmax_index].coverage > rows[rows.len() - 1].coverage);
    }
    Ok(CoverageTable {
        rows,
        argmax_index,
        constant,
    })
}

/// Draws a random joint PMF with the given shape, zeroing some entries.
pub fn random_joint(stream: &mut impl Rng, rows: usize, cols: usize) -> Result<DiscreteJoint> {
    loop {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let u: f64 = stream.random();
            // Squaring spreads mass unevenly; a fifth of the entries drop to 0.
            data.push(if stream.random::<f64>() < 0.2 { 0.0 } else { u * u });
        }
        let total: f64 = data.iter().sum();
        if total < 1e-6 {
            continue;
        }
        for v in &mut data {
            *v /= total;
        }
        let drift = 1.0 - data.iter().sum::<f64>();
        if let Some(big) = data
            .iter_mut()
            .max_by(|a, b| a.partial_cmp(b).expect("finite entries"))
        {
            *big += drift;
        }
        return DiscreteJoint::new(Matrix::new(rows, cols, data)?);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joint(data: Vec<f64>, rows: usize, cols: usize) -> DiscreteJoint {
        DiscreteJoint::new(Matrix::new(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn joint_validation() {
        assert!(DiscreteJoint::new(Matrix::new(2, 2, vec![0.5, 0.5, 0.25, -0.25]).unwrap()).is_err());
        assert!(DiscreteJoint::new(Matrix::new(2, 2, vec![0.3; 4]).unwrap()).is_err());
        let j = joint(vec![0.4, 0.1, 0.1, 0.4], 2, 2);
        assert_eq!(j.row_marginal(), vec![0.5, 0.5]);
        assert_eq!(j.col_marginal(), vec![0.5, 0.5]);
    }

    #[test]
    fn mutual_information_reference_values() {
        let product = joint(vec![0.25; 4], 2, 2);
        assert!(product.mutual_information() < 1e-15);

        let diagonal = joint(vec![0.5, 0.0, 0.0, 0.5], 2, 2);
        assert!((diagonal.mutual_information() - std::f64::consts::LN_2).abs() < 1e-15);

        // Independently computed: Σ p ln(p / (p_i q_j)) for this table.
        let correlated = joint(vec![0.4, 0.1, 0.1, 0.4], 2, 2);
        assert!((correlated.mutual_information() - 0.192745).abs() < 1e-6);
    }

    #[test]
    fn poe_single_energy_is_exact() {
        let grid: Vec<f64> = (0..2001).map(|i| -6.0 + i as f64 * 0.006).collect();
        let energy: Vec<f64> = grid.iter().map(|x| 0.5 * x * x).collect();
        let es = EnergySet::new(grid, vec![energy], vec![1.0]).unwrap();
        assert!(poe_check(&es).unwrap() < 1e-12);
    }

    #[test]
    fn poe_two_gaussians_match_precision_weighted_product() {
        let grid: Vec<f64> = (0..4001).map(|i| -8.0 + i as f64 * 0.004).collect();
        let (a, s1) = (0.7, 0.8);
        let (b, s2) = (-0.4, 1.3);
        let e1: Vec<f64> = grid.iter().map(|x| (x - a).powi(2) / (2.0 * s1 * s1)).collect();
        let e2: Vec<f64> = grid.iter().map(|x| (x - b).powi(2) / (2.0 * s2 * s2)).collect();
        let es = EnergySet::new(grid.clone(), vec![e1, e2], vec![1.0, 1.0]).unwrap();
        assert!(poe_check(&es).unwrap() < 1e-10);

        // The additive density must equal the precision-weighted Gaussian.
        let prec = 1.0 / (s1 * s1) + 1.0 / (s2 * s2);
        let mean = (a / (s1 * s1) + b / (s2 * s2)) / prec;
        let reference: Vec<f64> = grid
            .iter()
            .map(|x| (-0.5 * prec * (x - mean).powi(2)).exp())
            .collect();
        let reference = normalize_density(&grid, reference).unwrap();
        let sum: Vec<f64> = grid
            .iter()
            .map(|x| {
                (-((x - a).powi(2) / (2.0 * s1 * s1) + (x - b).powi(2) / (2.0 * s2 * s2))).exp()
            })
            .collect();
        let additive = normalize_density(&grid, sum).unwrap();
        let gap = additive
            .iter()
            .zip(&reference)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-10, "gap to closed-form product {gap}");
    }

    #[test]
    fn poe_random_smooth_energies() {
        let mut stream = rng::stream(17);
        for trial in 0..20 {
            let grid: Vec<f64> = (0..4001).map(|i| -6.0 + i as f64 * 0.003).collect();
            let energies: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let center: f64 = stream.random_range(-1.5..1.5);
                    let curvature: f64 = stream.random_range(0.3..1.2);
                    let ripple: f64 = stream.random_range(0.0..0.5);
                    let freq: f64 = stream.random_range(0.5..2.0);
                    grid.iter()
                        .map(|x| curvature * (x - center).powi(2) + ripple * (freq * x).cos())
                        .collect()
                })
                .collect();
            let weights: Vec<f64> = (0..3).map(|_| stream.random_range(0.3..2.0)).collect();
            let es = EnergySet::new(grid, energies, weights).unwrap();
            let disc = poe_check(&es).unwrap();
            assert!(disc < 1e-9, "trial {trial}: discrepancy {disc}");
        }
    }

    #[test]
    fn poe_discrepancy_stable_under_refinement() {
        let coarse: Vec<f64> = (0..2001).map(|i| -6.0 + i as f64 * 0.006).collect();
        let fine: Vec<f64> = (0..4001).map(|i| -6.0 + i as f64 * 0.003).collect();
        let build = |grid: &[f64]| {
            let e1: Vec<f64> = grid.iter().map(|x| 0.7 * (x - 0.3).powi(2)).collect();
            let e2: Vec<f64> = grid.iter().map(|x| 0.4 * x * x + 0.2 * (1.3 * x).cos()).collect();
            EnergySet::new(grid.to_vec(), vec![e1, e2], vec![0.8, 1.1]).unwrap()
        };
        let coarse_disc = poe_check(&build(&coarse)).unwrap();
        let fine_disc = poe_check(&build(&fine)).unwrap();
        assert!(fine_disc <= coarse_disc + 1e-12);
    }

    #[test]
    fn closure_hand_cases() {
        let product = closure_complete(&[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]).unwrap();
        assert_eq!(product.len(), 4);

        let completed = closure_complete(&[vec![0, 0], vec![1, 1]]).unwrap();
        let expect: BTreeSet<BlockCode> =
            [vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]].into_iter().collect();
        assert_eq!(completed, expect);

        assert!(closure_complete(&[]).unwrap().is_empty());
        assert!(closure_complete(&[vec![0, 1], vec![0]]).is_err());
    }

    #[test]
    fn closure_equals_projection_product() {
        let mut stream = rng::stream(23);
        for _ in 0..200 {
            let count = stream.random_range(1..=5);
            let codes: Vec<BlockCode> = (0..count)
                .map(|_| (0..3).map(|_| stream.random_range(0..3u32)).collect())
                .collect();
            let closed = closure_complete(&codes).unwrap();

            let mut projections: [BTreeSet<u32>; 3] = Default::default();
            for c in &codes {
                for (k, &v) in c.iter().enumerate() {
                    projections[k].insert(v);
                }
            }
            let mut product = BTreeSet::new();
            for &a in &projections[0] {
                for &b in &projections[1] {
                    for &c in &projections[2] {
                        product.insert(vec![a, b, c]);
                    }
                }
            }
            assert_eq!(closed, product);
        }
    }

    #[test]
    fn closure_is_closed_under_every_mask() {
        let mut stream = rng::stream(29);
        let codes: Vec<BlockCode> = (0..4)
            .map(|_| (0..3).map(|_| stream.random_range(0..4u32)).collect())
            .collect();
        let closed = closure_complete(&codes).unwrap();
        let members: Vec<BlockCode> = closed.iter().cloned().collect();
        for a in &members {
            for b in &members {
                for mask_bits in 0u32..8 {
                    let mixed: BlockCode = (0..3)
                        .map(|k| if (mask_bits >> k) & 1 == 1 { a[k] } else { b[k] })
                        .collect();
                    assert!(closed.contains(&mixed));
                }
            }
        }
    }

    #[test]
    fn mi_contraction_reference_values() {
        let diagonal = joint(vec![0.5, 0.0, 0.0, 0.5], 2, 2);
        let (lhs, bound) = mi_contraction(&diagonal, 1.0).unwrap();
        assert!((lhs - bound).abs() < 1e-12);

        let (lhs0, _) = mi_contraction(&diagonal, 0.0).unwrap();
        assert!(lhs0 < 1e-15);

        // Mixture at α = ½ is [[0.375, 0.125], [0.125, 0.375]].
        let (lhs_half, bound_half) = mi_contraction(&diagonal, 0.5).unwrap();
        assert!((bound_half - 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((lhs_half - 0.130812).abs() < 1e-5);

        assert!(mi_contraction(&diagonal, 1.5).is_err());
    }

    #[test]
    fn mi_contraction_random_sweep() {
        let mut stream = rng::stream(31);
        for _ in 0..100 {
            let rows = stream.random_range(2..=5);
            let cols = stream.random_range(2..=5);
            let j = random_joint(&mut stream, rows, cols).unwrap();
            for step in 0..=10 {
                let alpha = step as f64 / 10.0;
                // The inequality itself is asserted inside.
                let (lhs, bound) = mi_contraction(&j, alpha).unwrap();
                assert!(lhs.is_finite() && bound.is_finite());
            }
        }
    }

    #[test]
    fn mask_alpha_values() {
        for k in 2..=6 {
            assert_eq!(mask_alpha(MaskPolicy::IidHalf, k, 0, 1).unwrap(), 0.5);
        }
        assert_eq!(mask_alpha(MaskPolicy::Proper, 2, 0, 1).unwrap(), 0.0);
        assert_eq!(mask_alpha(MaskPolicy::Proper, 3, 0, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_alpha(MaskPolicy::Proper, 3, 1, 2).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_alpha(MaskPolicy::Proper, 4, 0, 2).unwrap(), 3.0 / 7.0);
        assert!(mask_alpha(MaskPolicy::Proper, 3, 1, 1).is_err());
        assert!(mask_alpha(MaskPolicy::Proper, 1, 0, 1).is_err());
    }

    #[test]
    fn expected_coverage_reference_values() {
        let uniform = BinDistribution::uniform(10).unwrap();
        assert_eq!(expected_coverage(&uniform, 1).unwrap(), 1.0);
        let big = expected_coverage(&uniform, 100).unwrap();
        assert!((big - 10.0 * (1.0 - 0.9f64.powi(100))).abs() < 1e-12);
        assert!((big - 9.99973).abs() < 1e-4);

        let point = BinDistribution::point_mass(7, 3).unwrap();
        for n in [1, 2, 10, 50] {
            assert_eq!(expected_coverage(&point, n).unwrap(), 1.0);
        }
        assert!(expected_coverage(&uniform, 0).is_err());
    }

    #[test]
    fn expected_coverage_monotone_and_bounded() {
        let mut stream = rng::stream(37);
        for _ in 0..10 {
            let bins = stream.random_range(2..=15);
            let q = {
                let mut raw: Vec<f64> = (0..bins).map(|_| stream.random::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                for v in &mut raw {
                    *v /= total;
                }
                let drift = 1.0 - raw.iter().sum::<f64>();
                raw[0] += drift;
                BinDistribution::new(raw).unwrap()
            };
            let mut prev = 0.0;
            for n in 1..=30 {
                let cov = expected_coverage(&q, n).unwrap();
                assert!(cov + 1e-12 >= prev);
                assert!(cov <= (n as f64).min(bins as f64) + 1e-12);
                prev = cov;
            }
        }
    }

    #[test]
    fn coverage_sim_matches_formula() {
        let mut stream = rng::stream(41);
        for trial in 0..3 {
            let bins = stream.random_range(3..=10);
            let mut raw: Vec<f64> = (0..bins).map(|_| stream.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            for v in &mut raw {
                *v /= total;
            }
            let drift = 1.0 - raw.iter().sum::<f64>();
            raw[0] += drift;
            let q = BinDistribution::new(raw).unwrap();
            let n = stream.random_range(2..=20);
            let trials = 10_000;
            let expect = expected_coverage(&q, n).unwrap();
            let sim = coverage_sim(&q, n, trials, 1000 + trial).unwrap();
            // Visit indicators are negatively correlated, so the independent
            // Bernoulli sum overestimates the variance.
            let var_bound: f64 = q
                .probabilities()
                .iter()
                .map(|&p| {
                    let hit = 1.0 - (1.0 - p).powi(n as i32);
                    hit * (1.0 - hit)
                })
                .sum();
            let se = (var_bound / trials as f64).sqrt();
            assert!(
                (sim - expect).abs() <= 3.0 * se.max(1e-3),
                "trial {trial}: sim {sim} vs formula {expect} (se {se})"
            );
        }
    }

    #[test]
    fn coverage_sim_exact_edges() {
        let point = BinDistribution::point_mass(5, 2).unwrap();
        assert_eq!(coverage_sim(&point, 17, 200, 3).unwrap(), 1.0);
        let uniform = BinDistribution::uniform(6).unwrap();
        assert_eq!(coverage_sim(&uniform, 1, 500, 4).unwrap(), 1.0);
    }

    #[test]
    fn inverted_u_default_family() {
        let family = InvertedUFamily::default();
        let grid: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let table = inverted_u_demo(&family, &grid, 20).unwrap();
        assert!(!table.constant);
        assert!(table.argmax_index > 0 && table.argmax_index < 8);
        let peak = table.rows[table.argmax_index].coverage;
        assert!(peak > table.rows[0].coverage);
        assert!(peak > table.rows[8].coverage);
        let csv = table.csv();
        assert!(csv.starts_with(COVERAGE_CSV_HEADER));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn inverted_u_constant_family_is_flagged() {
        let family = InvertedUFamily {
            bins: 12,
            failure_mass_lo_lambda: 0.4,
            failure_mass_hi_lambda: 0.4,
            concentration_lo_lambda: 1.0,
            concentration_hi_lambda: 1.0,
        };
        let grid: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let table = inverted_u_demo(&family, &grid, 15).unwrap();
        assert!(table.constant);
    }
}
