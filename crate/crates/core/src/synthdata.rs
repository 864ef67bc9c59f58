//! Synthetic three-factor dataset: ground-truth factors, the fixed analytic
//! decoder, and the entangled linear mixing `z = M s`.
//!
//! Factors live in three 2-D blocks with distinct geometry (noisy ring,
//! uniform square, bimodal Gaussian). Observations are 4-D with explicit
//! cross-factor interactions, so no single observation coordinate exposes a
//! factor directly.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{random_orthogonal, Matrix};
use crate::rng;
use crate::Result;

/// Orthogonality tolerance enforced on the mixing matrix.
const MIXING_ORTHO_TOL: f64 = 1e-10;

/// Column layout of the dataset CSV.
pub const CSV_HEADER: &str = "s1x,s1y,s2x,s2y,s3x,s3y,z1,z2,z3,z4,z5,z6,x0,x1,x2,x3";

/// One draw of the three ground-truth factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSample {
    pub s1: [f64; 2],
    pub s2: [f64; 2],
    pub s3: [f64; 2],
}

impl FactorSample {
    pub fn concat(&self) -> [f64; 6] {
        [
            self.s1[0], self.s1[1], self.s2[0], self.s2[1], self.s3[0], self.s3[1],
        ]
    }

    pub fn from_concat(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::DimensionMismatch(format!(
                "factor vector needs 6 entries, got {}",
                v.len()
            )));
        }
        Ok(Self {
            s1: [v[0], v[1]],
            s2: [v[2], v[3]],
            s3: [v[4], v[5]],
        })
    }
}

/// One decoded 4-D observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; 4]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Distribution parameters plus the fixed mixing matrix for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub ring_radius: f64,
    pub ring_noise: f64,
    pub square_half_width: f64,
    pub bimodal_means: [[f64; 2]; 2],
    pub bimodal_std: f64,
    pub mixing_seed: u64,
    pub mixing: Matrix,
}

impl GroundTruthSpec {
    /// Default parameters with the mixing matrix drawn from `mixing_seed`.
    pub fn with_mixing_seed(mixing_seed: u64) -> Self {
        Self::new(1.0, 0.1, 1.0, [[1.5, 0.0], [-1.5, 0.0]], 0.3, mixing_seed)
            .expect("default parameters are valid")
    }

    pub fn new(
        ring_radius: f64,
        ring_noise: f64,
        square_half_width: f64,
        bimodal_means: [[f64; 2]; 2],
        bimodal_std: f64,
        mixing_seed: u64,
    ) -> Result<Self> {
        if ring_noise <= 0.0 || bimodal_std <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ring_noise and bimodal_std must be positive, got {ring_noise} and {bimodal_std}"
            )));
        }
        if square_half_width <= 0.0 || ring_radius <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ring_radius and square_half_width must be positive, got {ring_radius} and {square_half_width}"
            )));
        }
        let mixing = random_orthogonal(mixing_seed, 6);
        let spec = Self {
            ring_radius,
            ring_noise,
            square_half_width,
            bimodal_means,
            bimodal_std,
            mixing_seed,
            mixing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mixing;
        if m.rows() != 6 || m.cols() != 6 {
            return Err(Error::InvalidConfig(format!(
                "mixing matrix must be 6x6, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let gram = m.matmul_tn(m)?;
        let dev = gram.max_abs_diff(&Matrix::identity(6));
        if dev > MIXING_ORTHO_TOL {
            return Err(Error::IllConditioned { max_deviation: dev });
        }
        if self.ring_noise <= 0.0 || self.bimodal_std <= 0.0 {
            return Err(Error::InvalidConfig(
                "ring_noise and bimodal_std must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Factors, their entangled codes, and decoded observations, all aligned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub factors: Vec<FactorSample>,
    pub entangled: Vec<[f64; 6]>,
    pub observations: Vec<Observation>,
    pub spec: GroundTruthSpec,
}

/// Draws `n` factor samples: noisy ring, uniform square, bimodal Gaussian.
pub fn sample_factors(seed: u64, n: usize, spec: &GroundTruthSpec) -> Vec<FactorSample> {
    let mut stream = rng::stream(seed);
    (0..n)
        .map(|_| {
            let theta = stream.random::<f64>() * std::f64::consts::TAU;
            let r = spec.ring_radius + spec.ring_noise * stream.sample::<f64, _>(StandardNormal);
            let s1 = [r * theta.cos(), r * theta.sin()];
            let h = spec.square_half_width;
            let s2 = [
                stream.random::<f64>() * 2.0 * h - h,
                stream.random::<f64>() * 2.0 * h - h,
            ];
            let mean = spec.bimodal_means[usize::from(stream.random::<bool>())];
            let s3 = [
                mean[0] + spec.bimodal_std * stream.sample::<f64, _>(StandardNormal),
                mean[1] + spec.bimodal_std * stream.sample::<f64, _>(StandardNormal),
            ];
            FactorSample { s1, s2, s3 }
        })
        .collect()
}

/// The fixed analytic decoder with cross-factor interactions.
pub fn decode(s: &FactorSample) -> Observation {
    let x0 = s.s1[0] * s.s2[0] + s.s1[1] * s.s2[1];
    let x1 = s.s2[0] * s.s3[0] + s.s2[1] * s.s3[1];
    let x2 = (s.s1[0] * s.s1[0] + s.s1[1] * s.s1[1]) - (s.s3[0] * s.s3[0] + s.s3[1] * s.s3[1]);
    let x3 = s.s1[0] * s.s3[1] - s.s1[1] * s.s3[0];
    Observation([x0, x1, x2, x3])
}

/// Analytic 4x6 Jacobian of [`decode`], columns ordered (s1x,s1y,s2x,s2y,s3x,s3y).
pub fn decode_jacobian(s: &FactorSample) -> Matrix {
    let [s1x, s1y] = s.s1;
    let [s2x, s2y] = s.s2;
    let [s3x, s3y] = s.s3;
    Matrix::from_rows(&[
        vec![s2x, s2y, s1x, s1y, 0.0, 0.0],
        vec![0.0, 0.0, s3x, s3y, s2x, s2y],
        vec![2.0 * s1x, 2.0 * s1y, 0.0, 0.0, -2.0 * s3x, -2.0 * s3y],
        vec![s3y, -s3x, 0.0, 0.0, -s1y, s1x],
    ])
    .expect("fixed shape")
}

/// Entangled code `z = M · concat(s)`.
pub fn entangle(s: &FactorSample, m: &Matrix) -> Result<[f64; 6]> {
    let z = m.matvec(&s.concat())?;
    let mut out = [0.0; 6];
    out.copy_from_slice(&z);
    Ok(out)
}

/// Samples factors, entangles, and decodes; deterministic per seed.
pub fn make_dataset(seed: u64, n: usize, spec: &GroundTruthSpec) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    let factors = sample_factors(seed, n, spec);
    let entangled = factors
        .iter()
        .map(|s| entangle(s, &spec.mixing))
        .collect::<Result<Vec<_>>>()?;
    let observations = factors.iter().map(decode).collect();
    Ok(Dataset {
        factors,
        entangled,
        observations,
        spec: spec.clone(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Factor rows as an n×6 matrix.
    pub fn factor_matrix(&self) -> Matrix {
        let data: Vec<f64> = self.factors.iter().flat_map(|s| s.concat()).collect();
        Matrix::new(self.len(), 6, data).expect("consistent row lengths")
    }

    /// Entangled rows as an n×6 matrix.
    pub fn entangled_matrix(&self) -> Matrix {
        let data: Vec<f64> = self.entangled.iter().flatten().copied().collect();
        Matrix::new(self.len(), 6, data).expect("consistent row lengths")
    }

    /// Observation rows as an n×4 matrix.
    pub fn observation_matrix(&self) -> Matrix {
        let data: Vec<f64> = self.observations.iter().flat_map(|o| o.0).collect();
        Matrix::new(self.len(), 4, data).expect("consistent row lengths")
    }

    /// One row per sample: factors, entangled code, observation.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            let s = self.factors[i].concat();
            let z = &self.entangled[i];
            let x = &self.observations[i].0;
            let row: Vec<String> = s
                .iter()
                .chain(z.iter())
                .chain(x.iter())
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// The generating spec (including the mixing matrix) as pretty JSON.
    pub fn spec_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.spec)
            .map_err(|e| Error::Format(format!("spec serialization: {e}")))
    }

    /// Parses the layout written by [`Dataset::write_csv`]; the spec comes
    /// from its JSON sidecar.
    pub fn read_csv(r: &mut impl BufRead, spec: GroundTruthSpec) -> Result<Dataset> {
        spec.validate()?;
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        if header != CSV_HEADER {
            return Err(Error::Format(format!("unexpected dataset header {header:?}")));
        }
        let mut factors = Vec::new();
        let mut entangled = Vec::new();
        let mut observations = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Format(format!("dataset row {}: {e}", i + 1)))?;
            if fields.len() != 16 {
                return Err(Error::Format(format!(
                    "dataset row {}: {} fields, expected 16",
                    i + 1,
                    fields.len()
                )));
            }
            factors.push(FactorSample::from_concat(&fields[..6])?);
            let mut z = [0.0; 6];
            z.copy_from_slice(&fields[6..12]);
            entangled.push(z);
            let mut x = [0.0; 4];
            x.copy_from_slice(&fields[12..16]);
            observations.push(Observation(x));
        }
        if factors.is_empty() {
            return Err(Error::Format("dataset holds no rows".into()));
        }
        Ok(Dataset {
            factors,
            entangled,
            observations,
            spec,
        })
    }
}
