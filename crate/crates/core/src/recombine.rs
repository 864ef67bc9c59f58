//! Blockwise latent recombination and the reparameterized decode pipeline.
//!
//! Codes are partitioned into K contiguous blocks; a binary mask selects each
//! block from one of two sources. Recombination can act on raw factors, on
//! entangled codes, or on learned coordinates `ŝ = W z` with the inverse map
//! applied before decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{invert_small, Matrix};
use crate::rng;
use crate::synthdata::{decode, decode_jacobian, FactorSample, Observation};
use crate::Result;

/// Tolerance on `‖W·W⁻¹ − I‖_max` for a usable reparameterization.
const INVERSE_TOL: f64 = 1e-8;

/// Which block comes from source A (true) versus source B (false).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixMask {
    bits: Vec<bool>,
}

impl MixMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn ones(k: usize) -> Self {
        Self { bits: vec![true; k] }
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Per-coordinate 0/1 selector for codes with `block` entries per block.
    pub fn expand(&self, block: usize) -> Vec<f64> {
        self.bits
            .iter()
            .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, block))
            .collect()
    }
}

/// How masks are drawn during training versus evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskPolicy {
    /// Each bit an independent fair coin; degenerate masks allowed.
    IidHalf,
    /// Uniform over masks that mix both sources (all-zeros and all-ones excluded).
    Proper,
}

impl MaskPolicy {
    pub fn name(self) -> &'static str {
        match self {
            MaskPolicy::IidHalf => "iid-half",
            MaskPolicy::Proper => "proper",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid-half" => Ok(MaskPolicy::IidHalf),
            "proper" => Ok(MaskPolicy::Proper),
            other => Err(Error::InvalidConfig(format!("unknown mask policy `{other}`"))),
        }
    }
}

/// Draws one mask from an existing stream.
pub fn sample_mask_with(stream: &mut impl Rng, k: usize, policy: MaskPolicy) -> Result<MixMask> {
    if k == 0 {
        return Err(Error::InvalidMaskPolicy {
            policy: policy.name(),
            min_k: 1,
            k,
        });
    }
    match policy {
        MaskPolicy::IidHalf => Ok(MixMask {
            bits: (0..k).map(|_| stream.random::<bool>()).collect(),
        }),
        MaskPolicy::Proper => {
            if k < 2 {
                return Err(Error::InvalidMaskPolicy {
                    policy: policy.name(),
                    min_k: 2,
                    k,
                });
            }
            // Legal codes are 1 .. 2^k - 2 inclusive: never all-zeros, never all-ones.
            let code = stream.random_range(1..(1u64 << k) - 1);
            Ok(MixMask {
                bits: (0..k).map(|i| code >> i & 1 == 1).collect(),
            })
        }
    }
}

/// Seeded convenience wrapper around [`sample_mask_with`].
pub fn sample_mask(seed: u64, k: usize, policy: MaskPolicy) -> Result<MixMask> {
    sample_mask_with(&mut rng::stream(seed), k, policy)
}

/// Blockwise selection: block k of the output comes from `a` if bit k is set,
/// else from `b`. Lengths must agree and divide evenly into K blocks.
pub fn mix(a: &[f64], b: &[f64], mask: &MixMask) -> Result<Vec<f64>> {
    let k = mask.k();
    if a.len() != b.len() || k == 0 || a.len() % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot mix lengths {} and {} into {} blocks",
            a.len(),
            b.len(),
            k
        )));
    }
    let block = a.len() / k;
    let mut out = Vec::with_capacity(a.len());
    for (i, &take_a) in mask.bits.iter().enumerate() {
        let src = if take_a { a } else { b };
        out.extend_from_slice(&src[i * block..(i + 1) * block]);
    }
    Ok(out)
}

/// Swap blocks directly in entangled coordinates, then invert and decode.
pub fn naive_recombine_decode(
    za: &[f64],
    zb: &[f64],
    mask: &MixMask,
    m: &Matrix,
) -> Result<Observation> {
    let mixed = mix(za, zb, mask)?;
    let s = m.transpose().matvec(&mixed)?;
    Ok(decode(&FactorSample::from_concat(&s)?))
}

/// Learned linear reparameterization with a cached, verified inverse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reparam {
    w: Matrix,
    w_inv: Matrix,
}

impl Reparam {
    /// Builds the cached inverse; fails if `W · W⁻¹` strays from identity.
    pub fn new(w: Matrix) -> Result<Self> {
        let w_inv = invert_small(&w)?;
        let residual = w.matmul(&w_inv)?.max_abs_diff(&Matrix::identity(w.rows()));
        if residual > INVERSE_TOL {
            return Err(Error::IllConditioned {
                max_deviation: residual,
            });
        }
        Ok(Self { w, w_inv })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            w: Matrix::identity(n),
            w_inv: Matrix::identity(n),
        }
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn w_inv(&self) -> &Matrix {
        &self.w_inv
    }
}

/// Swap blocks in `ŝ = W z` coordinates: decode(Mᵀ · W⁻¹ · mix(W·zA, W·zB, S)).
pub fn reparam_recombine_decode(
    za: &[f64],
    zb: &[f64],
    mask: &MixMask,
    rep: &Reparam,
    m: &Matrix,
) -> Result<Observation> {
    let a = rep.w.matvec(za)?;
    let b = rep.w.matvec(zb)?;
    let mixed = mix(&a, &b, mask)?;
    let v = rep.w_inv.matvec(&mixed)?;
    let s = m.transpose().matvec(&v)?;
    Ok(decode(&FactorSample::from_concat(&s)?))
}

/// Gradient of `upstreamᵀ · reparam_recombine_decode(...)` with respect to W.
///
/// With D the expanded mask, v = W⁻¹·mix(W·zA, W·zB, S), and
/// h = W⁻ᵀ·M·J_decodeᵀ·upstream, the chain rule (using
/// d(W⁻¹) = −W⁻¹ dW W⁻¹) gives
/// `grad = −h·vᵀ + (D·h)·zAᵀ + ((I−D)·h)·zBᵀ`.
pub fn reparam_recombine_grad(
    za: &[f64],
    zb: &[f64],
    mask: &MixMask,
    rep: &Reparam,
    m: &Matrix,
    upstream: &[f64],
) -> Result<Matrix> {
    let d = rep.w.rows();
    if za.len() != d || zb.len() != d || upstream.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "grad expects codes of length {d} and a 4-vector upstream, got {}, {}, {}",
            za.len(),
            zb.len(),
            upstream.len()
        )));
    }
    let a = rep.w.matvec(za)?;
    let b = rep.w.matvec(zb)?;
    let mixed = mix(&a, &b, mask)?;
    let v = rep.w_inv.matvec(&mixed)?;
    let s = m.transpose().matvec(&v)?;
    let sample = FactorSample::from_concat(&s)?;

    // g = M · J_fᵀ · upstream, pulled back to v-coordinates.
    let jac = decode_jacobian(&sample);
    let jt_u = jac.transpose().matvec(upstream)?;
    let g = m.matvec(&jt_u)?;
    // h = W⁻ᵀ g.
    let h = rep.w_inv.transpose().matvec(&g)?;

    let sel = mask.expand(d / mask.k());
    let mut grad = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mixed_term = sel[i] * h[i] * za[j] + (1.0 - sel[i]) * h[i] * zb[j];
            grad.set(i, j, mixed_term - h[i] * v[j]);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_rel_err, random_orthogonal};
    use crate::synthdata::{entangle, sample_factors, GroundTruthSpec};
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn spec() -> GroundTruthSpec {
        GroundTruthSpec::with_mixing_seed(42)
    }

    fn entangled_pair(seed: u64) -> ([f64; 6], [f64; 6]) {
        let sp = spec();
        let f = sample_factors(seed, 2, &sp);
        (
            entangle(&f[0], &sp.mixing).unwrap(),
            entangle(&f[1], &sp.mixing).unwrap(),
        )
    }

    fn random_w(seed: u64) -> Matrix {
        let mut stream = rng::stream(seed);
        let mut w = Matrix::identity(6);
        for v in w.data_mut() {
            *v += 0.15 * stream.sample::<f64, _>(StandardNormal);
        }
        w
    }

    #[test]
    fn mask_frequencies_iid_half() {
        let mut stream = rng::stream(1);
        let n = 100_000;
        let mut counts = [0usize; 3];
        let mut agree = [0usize; 3];
        for _ in 0..n {
            let m = sample_mask_with(&mut stream, 3, MaskPolicy::IidHalf).unwrap();
            for i in 0..3 {
                counts[i] += usize::from(m.bit(i));
                agree[i] += usize::from(m.bit(i) == m.bit((i + 1) % 3));
            }
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.01, "bit frequency {f}");
        }
        for a in agree {
            let f = a as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.01, "pair agreement {f}");
        }
    }

    #[test]
    fn mask_frequencies_proper_k2() {
        let mut stream = rng::stream(2);
        let n = 100_000;
        let mut first = 0usize;
        for _ in 0..n {
            let m = sample_mask_with(&mut stream, 2, MaskPolicy::Proper).unwrap();
            assert_ne!(m.bit(0), m.bit(1), "proper masks must mix both sources");
            first += usize::from(m.bit(0));
        }
        let f = first as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.01, "mask (1,0) frequency {f}");
    }

    #[test]
    fn mask_policy_errors() {
        assert!(matches!(
            sample_mask(0, 1, MaskPolicy::Proper),
            Err(Error::InvalidMaskPolicy { .. })
        ));
        assert!(sample_mask(0, 1, MaskPolicy::IidHalf).is_ok());
        assert!(matches!(
            sample_mask(0, 0, MaskPolicy::IidHalf),
            Err(Error::InvalidMaskPolicy { .. })
        ));
    }

    #[test]
    fn mix_hand_case() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [-1.0, -2.0, -3.0, -4.0, -5.0, -6.0];
        let m = MixMask::new(vec![true, false, true]);
        assert_eq!(
            mix(&a, &b, &m).unwrap(),
            vec![1.0, 2.0, -3.0, -4.0, 5.0, 6.0]
        );
        assert_eq!(mix(&a, &b, &MixMask::ones(3)).unwrap(), a.to_vec());
        assert_eq!(
            mix(&a, &b, &MixMask::new(vec![false; 3])).unwrap(),
            b.to_vec()
        );
    }

    proptest! {
        #[test]
        fn mix_of_identical_codes_is_identity(
            z in prop::collection::vec(-10.0f64..10.0, 6),
            bits in prop::collection::vec(any::<bool>(), 3),
        ) {
            let m = MixMask::new(bits);
            prop_assert_eq!(mix(&z, &z, &m).unwrap(), z);
        }

        #[test]
        fn mix_swap_equals_complement(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            bits in prop::collection::vec(any::<bool>(), 3),
        ) {
            let m = MixMask::new(bits);
            prop_assert_eq!(
                mix(&a, &b, &m).unwrap(),
                mix(&b, &a, &m.complement()).unwrap()
            );
        }
    }

    #[test]
    fn naive_recombine_identities() {
        let sp = spec();
        let (za, zb) = entangled_pair(3);
        let mask = MixMask::new(vec![true, false, true]);
        let same = naive_recombine_decode(&za, &za, &mask, &sp.mixing).unwrap();
        let direct = decode(
            &FactorSample::from_concat(&sp.mixing.transpose().matvec(&za).unwrap()).unwrap(),
        );
        for (a, b) in same.0.iter().zip(direct.0) {
            assert!((a - b).abs() < 1e-12);
        }

        let f = sample_factors(4, 2, &sp);
        let id = Matrix::identity(6);
        let out = naive_recombine_decode(&f[0].concat(), &f[1].concat(), &MixMask::ones(3), &id)
            .unwrap();
        assert_eq!(out, decode(&f[0]));
        let _ = zb;
    }

    #[test]
    fn reparam_identity_matches_naive() {
        let sp = spec();
        let (za, zb) = entangled_pair(5);
        let rep = Reparam::identity(6);
        for bits in [[true, false, false], [false, true, true], [true, false, true]] {
            let mask = MixMask::new(bits.to_vec());
            let naive = naive_recombine_decode(&za, &zb, &mask, &sp.mixing).unwrap();
            let rp = reparam_recombine_decode(&za, &zb, &mask, &rep, &sp.mixing).unwrap();
            for (a, b) in naive.0.iter().zip(rp.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reparam_all_ones_recovers_source_a() {
        let sp = spec();
        let (za, zb) = entangled_pair(6);
        let rep = Reparam::new(random_w(7)).unwrap();
        let out = reparam_recombine_decode(&za, &zb, &MixMask::ones(3), &rep, &sp.mixing).unwrap();
        let direct = decode(
            &FactorSample::from_concat(&sp.mixing.transpose().matvec(&za).unwrap()).unwrap(),
        );
        for (a, b) in out.0.iter().zip(direct.0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn reparam_scale_invariance() {
        let sp = spec();
        let (za, zb) = entangled_pair(8);
        let q = random_orthogonal(9, 6);
        let mask = MixMask::new(vec![false, true, false]);
        let base = reparam_recombine_decode(&za, &zb, &mask, &Reparam::new(q.clone()).unwrap(), &sp.mixing)
            .unwrap();
        let scaled =
            reparam_recombine_decode(&za, &zb, &mask, &Reparam::new(q.scale(-3.7)).unwrap(), &sp.mixing)
                .unwrap();
        for (a, b) in base.0.iter().zip(scaled.0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reparam_rejects_singular_w() {
        let mut w = Matrix::identity(6);
        w.set(0, 0, 0.0);
        w.set(0, 1, 0.0);
        assert!(Reparam::new(w).is_err());
    }

    #[test]
    fn grad_zero_upstream() {
        let sp = spec();
        let (za, zb) = entangled_pair(10);
        let rep = Reparam::new(random_w(11)).unwrap();
        let mask = MixMask::new(vec![true, false, true]);
        let g = reparam_recombine_grad(&za, &zb, &mask, &rep, &sp.mixing, &[0.0; 4]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let sp = spec();
        let mut stream = rng::stream(12);
        for case in 0..20u64 {
            let (za, zb) = entangled_pair(100 + case);
            let mask = sample_mask_with(&mut stream, 3, MaskPolicy::Proper).unwrap();
            let rep = Reparam::new(random_w(200 + case)).unwrap();
            let upstream: [f64; 4] = std::array::from_fn(|_| stream.sample(StandardNormal));

            let analytic =
                reparam_recombine_grad(&za, &zb, &mask, &rep, &sp.mixing, &upstream).unwrap();

            let mask_c = mask.clone();
            let m = sp.mixing.clone();
            let f = move |w_flat: &[f64]| {
                let w = Matrix::new(6, 6, w_flat.to_vec()).unwrap();
                let r = Reparam::new(w).unwrap();
                let x = reparam_recombine_decode(&za, &zb, &mask_c, &r, &m).unwrap();
                x.0.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let fd = finite_diff_grad(f, rep.w().data(), 1e-5).unwrap();
            let err = grad_rel_err(analytic.data(), &fd);
            assert!(err < 1e-4, "case {case}: grad rel err {err}");
        }
    }

    #[test]
    fn grad_all_ones_mask_agrees_with_finite_differences() {
        // With every block taken from A the pipeline value is constant in W
        // (W⁻¹W cancels), so both gradients vanish up to roundoff; the check
        // is that they agree, not that they are nonzero.
        let sp = spec();
        let mut stream = rng::stream(13);
        let (za, zb) = entangled_pair(14);
        let rep = Reparam::new(random_w(15)).unwrap();
        let upstream: [f64; 4] = std::array::from_fn(|_| stream.sample(StandardNormal));
        let mask = MixMask::ones(3);

        let analytic =
            reparam_recombine_grad(&za, &zb, &mask, &rep, &sp.mixing, &upstream).unwrap();
        let m = sp.mixing.clone();
        let f = move |w_flat: &[f64]| {
            let w = Matrix::new(6, 6, w_flat.to_vec()).unwrap();
            let r = Reparam::new(w).unwrap();
            let x = reparam_recombine_decode(&za, &zb, &mask, &r, &m).unwrap();
            x.0.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let fd = finite_diff_grad(f, rep.w().data(), 1e-5).unwrap();
        assert!(grad_rel_err(analytic.data(), &fd) < 1e-4);
        assert!(analytic.max_abs() < 1e-10, "analytic gradient should vanish");
    }
}
