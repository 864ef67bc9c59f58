//! Evaluation metrics: Mahalanobis distance, matched correlation, mutual
//! information gap, Gaussian total correlation, block-norm correlation, and a
//! Gaussian Fréchet distance.
//!
//! Everything is estimated from sample matrices (one row per sample) with
//! fixed seeds wherever subsampling is involved, so reports are reproducible.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{
    binned_entropy, cholesky, histogram_mi, hungarian, invert_small, pearson, spearman,
    sqrtm_psd, sym_logdet, Matrix,
};
use crate::rng;
use crate::Result;

/// Residual tolerance on `precision · covariance = I`.
const PRECISION_TOL: f64 = 1e-8;

/// Fitted Gaussian reference: mean, covariance, and cached precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianRef {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub precision: Matrix,
}

/// All Table-style metrics for one evaluated latent/observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mahalanobis2_mean: f64,
    pub mcc: f64,
    pub mig: f64,
    pub tc: f64,
    pub block_corr: f64,
    pub frechet: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "mahalanobis2_mean,mcc,mig,tc,block_corr,frechet,sample_count,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mahalanobis2_mean,
            self.mcc,
            self.mig,
            self.tc,
            self.block_corr,
            self.frechet,
            self.sample_count,
            self.seed
        )
    }
}

/// Options shared by [`full_report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub bins: usize,
    pub n_eval: usize,
    pub blocks: Vec<usize>,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            n_eval: 4000,
            blocks: vec![2, 2, 2],
            seed: 0,
        }
    }
}

fn column_means(samples: &Matrix) -> Vec<f64> {
    let n = samples.rows() as f64;
    (0..samples.cols())
        .map(|j| samples.column(j).iter().sum::<f64>() / n)
        .collect()
}

fn covariance(samples: &Matrix, mean: &[f64]) -> Matrix {
    let d = samples.cols();
    let n = samples.rows() as f64;
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..samples.rows() {
        for (c, (&v, &m)) in centered.iter_mut().zip(samples.row(i).iter().zip(mean)) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            let row = cov.row_mut(a);
            for (b, &cb) in centered.iter().enumerate() {
                row[b] += ca * cb;
            }
        }
    }
    cov.scale(1.0 / (n - 1.0))
}

/// Fits mean and unbiased covariance; fails unless the covariance is
/// positive definite and cleanly invertible.
pub fn fit_gaussian(samples: &Matrix) -> Result<GaussianRef> {
    let d = samples.cols();
    if samples.rows() <= d + 1 {
        return Err(Error::DimensionMismatch(format!(
            "need more than {} samples to fit a {d}-dimensional Gaussian, got {}",
            d + 1,
            samples.rows()
        )));
    }
    let mean = column_means(samples);
    let cov = covariance(samples, &mean);
    cholesky(&cov)?;
    let precision = invert_small(&cov)?;
    let residual = precision.matmul(&cov)?.max_abs_diff(&Matrix::identity(d));
    if residual > PRECISION_TOL {
        return Err(Error::IllConditioned {
            max_deviation: residual,
        });
    }
    Ok(GaussianRef {
        mean,
        covariance: cov,
        precision,
    })
}

/// Mean squared Mahalanobis distance of `samples` rows from `reference`.
pub fn mahalanobis2(samples: &Matrix, reference: &GaussianRef) -> Result<f64> {
    if samples.cols() != reference.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "samples have dim {}, reference {}",
            samples.cols(),
            reference.mean.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..samples.rows() {
        let d: Vec<f64> = samples
            .row(i)
            .iter()
            .zip(&reference.mean)
            .map(|(a, b)| a - b)
            .collect();
        let pd = reference.precision.matvec(&d)?;
        total += d.iter().zip(&pd).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total / samples.rows() as f64)
}

fn abs_spearman_or_zero(x: &[f64], y: &[f64]) -> Result<f64> {
    match spearman(x, y) {
        Ok(r) => Ok(r.abs()),
        // Constant coordinates carry no rank information: correlation 0.
        Err(Error::ZeroVariance(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Mean absolute Spearman correlation after optimal one-to-one matching of
/// factor coordinates to latent coordinates.
pub fn mcc(latents: &Matrix, factors: &Matrix) -> Result<f64> {
    let (n, dl) = (latents.rows(), latents.cols());
    let df = factors.cols();
    if factors.rows() != n || n < 10 || dl < df {
        return Err(Error::DimensionMismatch(format!(
            "mcc needs n >= 10 aligned rows and at least as many latents as factors, got {}x{dl} vs {}x{df}",
            n,
            factors.rows()
        )));
    }
    let mut abs_corr = Matrix::zeros(df, dl);
    let latent_cols: Vec<Vec<f64>> = (0..dl).map(|j| latents.column(j)).collect();
    for f in 0..df {
        let fc = factors.column(f);
        for (l, lc) in latent_cols.iter().enumerate() {
            abs_corr.set(f, l, abs_spearman_or_zero(lc, &fc)?);
        }
    }
    let cost = abs_corr.scale(-1.0).add(&ones_like(&abs_corr))?;
    let assignment = hungarian(&cost)?;
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(f, &l)| abs_corr.get(f, l))
        .sum();
    Ok(total / df as f64)
}

fn ones_like(m: &Matrix) -> Matrix {
    Matrix::new(m.rows(), m.cols(), vec![1.0; m.rows() * m.cols()]).expect("sized")
}

/// Mutual information gap: per factor, the two largest latent MIs normalized
/// by the factor's binned entropy; averaged over factors.
pub fn mig(
    latents: &Matrix,
    factors: &Matrix,
    bins: usize,
    n_eval: usize,
    seed: u64,
) -> Result<f64> {
    let n = latents.rows();
    let (dl, df) = (latents.cols(), factors.cols());
    if factors.rows() != n || dl < 2 {
        return Err(Error::DimensionMismatch(format!(
            "mig needs aligned rows and at least 2 latent coordinates, got {}x{dl} vs {}x{df}",
            n,
            factors.rows()
        )));
    }
    let rows: Vec<usize> = if n > n_eval {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed));
        idx.truncate(n_eval);
        idx
    } else {
        (0..n).collect()
    };
    let take = |m: &Matrix, j: usize| -> Vec<f64> {
        rows.iter().map(|&i| m.get(i, j)).collect()
    };
    let latent_cols: Vec<Vec<f64>> = (0..dl).map(|j| take(latents, j)).collect();
    let mut total_gap = 0.0;
    for f in 0..df {
        let fc = take(factors, f);
        let h = binned_entropy(&fc, bins)?;
        if h <= 0.0 {
            return Err(Error::DegenerateRange(0.0, format!("factor {f} entropy")));
        }
        let mut top1 = f64::NEG_INFINITY;
        let mut top2 = f64::NEG_INFINITY;
        for lc in &latent_cols {
            let mi = histogram_mi(lc, &fc, bins)?;
            if mi > top1 {
                top2 = top1;
                top1 = mi;
            } else if mi > top2 {
                top2 = mi;
            }
        }
        total_gap += (top1 - top2) / h;
    }
    Ok(total_gap / df as f64)
}

/// Gaussian total correlation `½(Σᵢ ln Σᵢᵢ − ln det Σ)` of the empirical
/// covariance.
pub fn gaussian_tc(samples: &Matrix) -> Result<f64> {
    let mean = column_means(samples);
    let cov = covariance(samples, &mean);
    let logdet = sym_logdet(&cov)?;
    let diag_sum: f64 = (0..cov.rows()).map(|i| cov.get(i, i).ln()).sum();
    Ok(0.5 * (diag_sum - logdet))
}

/// Mean absolute off-diagonal Pearson correlation of per-block row norms.
pub fn block_norm_corr(latents: &Matrix, blocks: &[usize]) -> Result<f64> {
    let total: usize = blocks.iter().sum();
    if total != latents.cols() || blocks.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "block sizes {blocks:?} incompatible with latent dim {}",
            latents.cols()
        )));
    }
    let n = latents.rows();
    let mut norms: Vec<Vec<f64>> = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for &b in blocks {
        let seq: Vec<f64> = (0..n)
            .map(|i| {
                latents.row(i)[offset..offset + b]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        norms.push(seq);
        offset += b;
    }
    let k = norms.len();
    let mut total_abs = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            total_abs += pearson(&norms[a], &norms[b])?.abs();
            pairs += 1;
        }
    }
    Ok(total_abs / pairs as f64)
}

/// Squared Fréchet (2-Wasserstein) distance between two fitted Gaussians.
pub fn frechet_from_refs(a: &GaussianRef, b: &GaussianRef) -> Result<f64> {
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root_a = sqrtm_psd(&a.covariance)?;
    let inner = root_a.matmul(&b.covariance)?.matmul(&root_a)?;
    let cross = sqrtm_psd(&symmetrize(&inner))?;
    let tr = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
    Ok((mean_sq + tr).max(0.0))
}

/// Fits Gaussians to both batches and returns their squared Fréchet distance.
pub fn frechet_gaussian(samples_a: &Matrix, samples_b: &Matrix) -> Result<f64> {
    frechet_from_refs(&fit_gaussian(samples_a)?, &fit_gaussian(samples_b)?)
}

fn symmetrize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.set(i, j, 0.5 * (m.get(i, j) + m.get(j, i)));
        }
    }
    out
}

/// Populates every [`MetricsReport`] field from one evaluated set.
pub fn full_report(
    latents: &Matrix,
    factors: &Matrix,
    observations: &Matrix,
    reference: &GaussianRef,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    if latents.rows() != factors.rows() {
        return Err(Error::DimensionMismatch(format!(
            "row counts differ: latents {}, factors {}",
            latents.rows(),
            factors.rows()
        )));
    }
    let obs_ref = fit_gaussian(observations)?;
    Ok(MetricsReport {
        mahalanobis2_mean: mahalanobis2(observations, reference)?,
        mcc: mcc(latents, factors)?,
        mig: mig(latents, factors, config.bins, config.n_eval, config.seed)?,
        tc: gaussian_tc(latents)?,
        block_corr: block_norm_corr(latents, &config.blocks)?,
        frechet: frechet_from_refs(&obs_ref, reference)?,
        sample_count: latents.rows(),
        seed: config.seed,
    })
}
