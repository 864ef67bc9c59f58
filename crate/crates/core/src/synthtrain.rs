//! Adversarial training of the linear reparameterization `ŝ = W z`.
//!
//! A small MLP discriminator learns to separate real observations from
//! reparameterized-recombined ones; W is trained with Adam to fool it while a
//! weak penalty pulls `WᵀW` toward identity. The decoder and the mixing matrix
//! stay fixed throughout.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{fit_gaussian, full_report, MetricsConfig, MetricsReport};
use crate::mlp::{Activation, MlpGrads, MlpParams};
use crate::numerics::{adam_step, AdamState, Matrix};
use crate::recombine::{
    reparam_recombine_decode, reparam_recombine_grad, sample_mask_with, MaskPolicy, MixMask,
    Reparam,
};
use crate::rng;
use crate::synthdata::Dataset;
use crate::Result;

/// Probabilities are clamped this far from {0, 1} before logs.
const PROB_CLAMP: f64 = 1e-12;

/// Discriminator architecture on 4-D observations (output is a logit).
pub const DISC_SIZES: [usize; 4] = [4, 64, 64, 1];

/// Builds a fresh He-initialized discriminator.
pub fn disc_init(seed: u64) -> MlpParams {
    MlpParams::he_init(
        &DISC_SIZES,
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        seed,
    )
    .expect("fixed architecture")
}

/// Seeds for the three stochastic ingredients of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSeeds {
    pub init: u64,
    pub masks: u64,
    pub batches: u64,
}

/// Hyperparameters of the synthetic adversarial run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub ortho_weight: f64,
    pub mask_policy: MaskPolicy,
    pub seeds: TrainSeeds,
    /// Recombined samples drawn for the final metrics evaluation.
    pub eval_pairs: usize,
    /// Held-out discriminator accuracy is measured every this many iterations.
    pub heldout_every: usize,
    pub heldout_pairs: usize,
    pub metrics: MetricsConfig,
}

impl SynthTrainConfig {
    pub fn with_seeds(seeds: TrainSeeds) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            iterations: 5000,
            ortho_weight: 1e-2,
            mask_policy: MaskPolicy::IidHalf,
            seeds,
            eval_pairs: 10_000,
            heldout_every: 250,
            heldout_pairs: 512,
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.ortho_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and ortho_weight nonnegative, got {} and {}",
                self.learning_rate, self.ortho_weight
            )));
        }
        if self.batch_size == 0 || self.eval_pairs == 0 || self.heldout_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, eval_pairs, and heldout_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Held-out discriminator accuracy at one point in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutPoint {
    pub iteration: usize,
    pub accuracy: f64,
}

/// Everything recorded during one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTrainReport {
    pub disc_losses: Vec<f64>,
    pub w_losses: Vec<f64>,
    pub ortho_penalties: Vec<f64>,
    pub heldout: Vec<HeldoutPoint>,
    pub initial_metrics: MetricsReport,
    pub final_metrics: MetricsReport,
    pub seeds: TrainSeeds,
    pub wall_clock_secs: f64,
}

/// Discriminator probability for one observation, clamped away from {0, 1}.
pub fn disc_forward(params: &MlpParams, x: &[f64]) -> Result<f64> {
    let logit = params.forward_vec(x)?[0];
    Ok(clamped_prob(logit))
}

/// Batched [`disc_forward`] over sample rows.
pub fn disc_forward_batch(params: &MlpParams, x: &Matrix) -> Result<Vec<f64>> {
    let cache = params.forward(x)?;
    Ok(cache.output().data().iter().map(|&z| clamped_prob(z)).collect())
}

/// Sigmoid of a logit, clamped away from {0, 1} so logs stay finite.
pub fn clamped_prob(logit: f64) -> f64 {
    let p = 1.0 / (1.0 + (-logit).exp());
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of real-vs-fake batches and its parameter gradients.
///
/// Loss is `−mean log D(real) − mean log(1 − D(fake))`; gradients flow
/// through the logit, so saturation never produces non-finite values.
pub fn disc_loss_grad(
    params: &MlpParams,
    reals: &Matrix,
    fakes: &Matrix,
) -> Result<(f64, MlpGrads)> {
    if reals.rows() == 0 || fakes.rows() == 0 {
        return Err(Error::DimensionMismatch("empty discriminator batch".into()));
    }
    let real_cache = params.forward(reals)?;
    let fake_cache = params.forward(fakes)?;
    let n_r = reals.rows() as f64;
    let n_f = fakes.rows() as f64;

    let mut loss = 0.0;
    let mut d_real = Matrix::zeros(reals.rows(), 1);
    for i in 0..reals.rows() {
        let p = clamped_prob(real_cache.output().get(i, 0));
        loss -= p.ln() / n_r;
        // d(−log σ(z))/dz = σ(z) − 1.
        d_real.set(i, 0, (p - 1.0) / n_r);
    }
    let mut d_fake = Matrix::zeros(fakes.rows(), 1);
    for i in 0..fakes.rows() {
        let p = clamped_prob(fake_cache.output().get(i, 0));
        loss -= (1.0 - p).ln() / n_f;
        // d(−log(1−σ(z)))/dz = σ(z).
        d_fake.set(i, 0, p / n_f);
    }

    let (mut grads, _) = params.backward(&real_cache, &d_real)?;
    let (fake_grads, _) = params.backward(&fake_cache, &d_fake)?;
    grads.add_scaled(&fake_grads, 1.0);
    Ok((loss, grads))
}

/// Adversarial W loss `mean −log D(x̂) + λ‖WᵀW−I‖_F²` and its W gradient.
pub fn w_loss_grad(
    rep: &Reparam,
    za_batch: &[[f64; 6]],
    zb_batch: &[[f64; 6]],
    masks: &[MixMask],
    disc: &MlpParams,
    mixing: &Matrix,
    ortho_weight: f64,
) -> Result<(f64, Matrix)> {
    let n = za_batch.len();
    if n == 0 || zb_batch.len() != n || masks.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "w_loss_grad batch lengths differ: {} / {} / {}",
            n,
            zb_batch.len(),
            masks.len()
        )));
    }

    // Forward all recombinations, then backprop the adversarial term through
    // the discriminator to per-sample upstream gradients in x-space.
    let mut xhat = Matrix::zeros(n, 4);
    for (i, ((za, zb), mask)) in za_batch.iter().zip(zb_batch).zip(masks).enumerate() {
        let obs = reparam_recombine_decode(za, zb, mask, rep, mixing)?;
        xhat.row_mut(i).copy_from_slice(obs.as_slice());
    }
    let cache = disc.forward(&xhat)?;
    let nf = n as f64;
    let mut loss = 0.0;
    let mut d_logit = Matrix::zeros(n, 1);
    for i in 0..n {
        let p = clamped_prob(cache.output().get(i, 0));
        loss -= p.ln() / nf;
        d_logit.set(i, 0, (p - 1.0) / nf);
    }
    let (_, d_x) = disc.backward(&cache, &d_logit)?;

    let mut grad = Matrix::zeros(6, 6);
    for (i, ((za, zb), mask)) in za_batch.iter().zip(zb_batch).zip(masks).enumerate() {
        let g = reparam_recombine_grad(za, zb, mask, rep, mixing, d_x.row(i))?;
        for (acc, v) in grad.data_mut().iter_mut().zip(g.data()) {
            *acc += v;
        }
    }

    // Regularizer λ‖WᵀW−I‖_F² with gradient 4λ·W·(WᵀW−I).
    let w = rep.w();
    let gram_dev = w.matmul_tn(w)?.sub(&Matrix::identity(6))?;
    loss += ortho_weight * gram_dev.frobenius_norm().powi(2);
    let reg_grad = w.matmul(&gram_dev)?.scale(4.0 * ortho_weight);
    let grad = grad.add(&reg_grad)?;
    Ok((loss, grad))
}

/// Draws `count` index pairs and masks for recombination evaluation.
fn draw_pairs(
    stream: &mut impl Rng,
    n: usize,
    count: usize,
    policy: MaskPolicy,
) -> Result<Vec<(usize, usize, MixMask)>> {
    (0..count)
        .map(|_| {
            let i = stream.random_range(0..n);
            let j = stream.random_range(0..n);
            Ok((i, j, sample_mask_with(stream, 3, policy)?))
        })
        .collect()
}

/// Decodes recombinations for the given pairs under `rep`.
fn recombine_batch(
    data: &Dataset,
    pairs: &[(usize, usize, MixMask)],
    rep: &Reparam,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(pairs.len(), 4);
    for (row, (i, j, mask)) in pairs.iter().enumerate() {
        let obs = reparam_recombine_decode(
            &data.entangled[*i],
            &data.entangled[*j],
            mask,
            rep,
            &data.spec.mixing,
        )?;
        out.row_mut(row).copy_from_slice(obs.as_slice());
    }
    Ok(out)
}

fn heldout_accuracy(
    disc: &MlpParams,
    data: &Dataset,
    pairs: &[(usize, usize, MixMask)],
    rep: &Reparam,
) -> Result<f64> {
    let fakes = recombine_batch(data, pairs, rep)?;
    let mut reals = Matrix::zeros(pairs.len(), 4);
    for (row, (i, _, _)) in pairs.iter().enumerate() {
        reals
            .row_mut(row)
            .copy_from_slice(data.observations[*i].as_slice());
    }
    let p_real = disc_forward_batch(disc, &reals)?;
    let p_fake = disc_forward_batch(disc, &fakes)?;
    let correct = p_real.iter().filter(|&&p| p > 0.5).count()
        + p_fake.iter().filter(|&&p| p < 0.5).count();
    Ok(correct as f64 / (2.0 * pairs.len() as f64))
}

/// Evaluates the Table-style metrics for the current reparameterization.
pub fn evaluate_reparam(
    data: &Dataset,
    rep: &Reparam,
    eval_pairs: usize,
    pair_seed: u64,
    metrics: &MetricsConfig,
) -> Result<MetricsReport> {
    let mut stream = rng::stream(pair_seed);
    let pairs = draw_pairs(&mut stream, data.len(), eval_pairs, MaskPolicy::Proper)?;
    let recombined = recombine_batch(data, &pairs, rep)?;
    let latents = data.entangled_matrix().matmul_nt(rep.w())?;
    let reference = fit_gaussian(&data.observation_matrix())?;
    full_report(
        &latents,
        &data.factor_matrix(),
        &recombined,
        &reference,
        metrics,
    )
}

/// Runs the alternating discriminator/W loop and reports everything.
pub fn train_synthetic(
    config: &SynthTrainConfig,
    data: &Dataset,
) -> Result<(Reparam, MlpParams, SynthTrainReport)> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "dataset of {} samples is smaller than batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    let started = Instant::now();

    let mut disc = disc_init(rng::split_seed(config.seeds.init, "disc-init"));
    let mut w = Matrix::identity(6);
    {
        let mut stream = rng::stream(rng::split_seed(config.seeds.init, "w-init"));
        for v in w.data_mut() {
            *v += 0.01 * stream.sample::<f64, _>(StandardNormal);
        }
    }
    let mut rep = Reparam::new(w).map_err(|cause| Error::TrainingAborted {
        iteration: 0,
        cause: Box::new(cause),
    })?;

    let mut disc_adam = AdamState::new(disc.param_count());
    let mut w_adam = AdamState::new(36);
    let mut mask_stream = rng::stream(config.seeds.masks);
    let mut batch_stream = rng::stream(config.seeds.batches);
    let heldout_pairs = draw_pairs(
        &mut rng::stream(rng::split_seed(config.seeds.masks, "heldout")),
        data.len(),
        config.heldout_pairs,
        MaskPolicy::Proper,
    )?;

    let eval_seed = rng::split_seed(config.seeds.masks, "eval-pairs");
    let initial_metrics =
        evaluate_reparam(data, &rep, config.eval_pairs, eval_seed, &config.metrics)?;

    let mut disc_losses = Vec::with_capacity(config.iterations);
    let mut w_losses = Vec::with_capacity(config.iterations);
    let mut ortho_penalties = Vec::with_capacity(config.iterations);
    let mut heldout = Vec::new();

    for iter in 0..config.iterations {
        let b = config.batch_size;
        let mut za_batch = Vec::with_capacity(b);
        let mut zb_batch = Vec::with_capacity(b);
        let mut masks = Vec::with_capacity(b);
        let mut reals = Matrix::zeros(b, 4);
        for i in 0..b {
            let ia = batch_stream.random_range(0..data.len());
            let ib = batch_stream.random_range(0..data.len());
            za_batch.push(data.entangled[ia]);
            zb_batch.push(data.entangled[ib]);
            masks.push(sample_mask_with(&mut mask_stream, 3, config.mask_policy)?);
            reals
                .row_mut(i)
                .copy_from_slice(data.observations[ia].as_slice());
        }

        let mut fakes = Matrix::zeros(b, 4);
        for (i, ((za, zb), mask)) in za_batch.iter().zip(&zb_batch).zip(&masks).enumerate() {
            let obs = reparam_recombine_decode(za, zb, mask, &rep, &data.spec.mixing)?;
            fakes.row_mut(i).copy_from_slice(obs.as_slice());
        }
        let (d_loss, d_grads) = disc_loss_grad(&disc, &reals, &fakes)?;
        let mut disc_flat = disc.flatten();
        adam_step(
            &mut disc_adam,
            &mut disc_flat,
            &d_grads.flatten(),
            config.learning_rate,
        )?;
        disc.unflatten_from(&disc_flat)?;

        let (w_loss, w_grad) = w_loss_grad(
            &rep,
            &za_batch,
            &zb_batch,
            &masks,
            &disc,
            &data.spec.mixing,
            config.ortho_weight,
        )?;
        let mut w_flat = rep.w().data().to_vec();
        adam_step(&mut w_adam, &mut w_flat, w_grad.data(), config.learning_rate)?;
        let w = Matrix::new(6, 6, w_flat)?;
        let penalty = w
            .matmul_tn(&w)?
            .sub(&Matrix::identity(6))?
            .frobenius_norm()
            .powi(2);
        rep = Reparam::new(w).map_err(|cause| Error::TrainingAborted {
            iteration: iter,
            cause: Box::new(cause),
        })?;

        disc_losses.push(d_loss);
        w_losses.push(w_loss);
        ortho_penalties.push(penalty);
        if (iter + 1) % config.heldout_every == 0 {
            heldout.push(HeldoutPoint {
                iteration: iter + 1,
                accuracy: heldout_accuracy(&disc, data, &heldout_pairs, &rep)?,
            });
        }
    }

    let final_metrics =
        evaluate_reparam(data, &rep, config.eval_pairs, eval_seed, &config.metrics)?;
    let report = SynthTrainReport {
        disc_losses,
        w_losses,
        ortho_penalties,
        heldout,
        initial_metrics,
        final_metrics,
        seeds: config.seeds,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((rep, disc, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_rel_err, random_orthogonal};
    use crate::synthdata::{make_dataset, GroundTruthSpec};

    fn tiny_disc(seed: u64) -> MlpParams {
        MlpParams::he_init(
            &[4, 8, 8, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            seed,
        )
        .unwrap()
    }

    fn small_dataset(seed: u64, n: usize) -> Dataset {
        make_dataset(seed, n, &GroundTruthSpec::with_mixing_seed(42)).unwrap()
    }

    fn batch(seed: u64, n: usize) -> Matrix {
        let mut stream = rng::stream(seed);
        Matrix::new(
            n,
            4,
            (0..n * 4)
                .map(|_| stream.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_discriminator_outputs_half() {
        let disc = MlpParams::zeros(
            &DISC_SIZES,
            &[Activation::Relu, Activation::Relu, Activation::Identity],
        )
        .unwrap();
        for x in [[0.0; 4], [1.0, -2.0, 3.0, -4.0]] {
            assert_eq!(disc_forward(&disc, &x).unwrap(), 0.5);
        }
        let (bce, _) = disc_loss_grad(&disc, &batch(1, 16), &batch(2, 16)).unwrap();
        assert!((bce - 2.0 * std::f64::consts::LN_2).abs() < 1e-12, "bce {bce}");
    }

    #[test]
    fn disc_batch_matches_per_sample() {
        let disc = disc_init(3);
        let x = batch(4, 9);
        let batched = disc_forward_batch(&disc, &x).unwrap();
        for i in 0..9 {
            let single = disc_forward(&disc, x.row(i)).unwrap();
            assert!((batched[i] - single).abs() < 1e-14);
        }
    }

    #[test]
    fn disc_monotone_in_final_bias() {
        let mut disc = tiny_disc(5);
        let x = [0.4, -1.0, 0.7, 0.1];
        let mut prev = 0.0;
        for bias in [-5.0, 0.0, 5.0, 30.0] {
            disc.unflatten_from(&{
                let mut f = disc.flatten();
                let last = f.len() - 1;
                f[last] = bias;
                f
            })
            .unwrap();
            let p = disc_forward(&disc, &x).unwrap();
            assert!(p > prev);
            prev = p;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn disc_grads_match_finite_differences() {
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 10 {
            seed += 1;
            let disc = tiny_disc(100 + seed);
            let reals = batch(200 + seed, 6);
            let fakes = batch(300 + seed, 5);
            let stacked = {
                let mut all = reals.data().to_vec();
                all.extend_from_slice(fakes.data());
                Matrix::new(11, 4, all).unwrap()
            };
            if disc.relu_kink_distance(&stacked).unwrap() < 1e-3 {
                continue;
            }
            checked += 1;

            let (_, grads) = disc_loss_grad(&disc, &reals, &fakes).unwrap();
            let probe = disc.clone();
            let f = move |p: &[f64]| {
                let mut d = probe.clone();
                d.unflatten_from(p).unwrap();
                disc_loss_grad(&d, &reals, &fakes).unwrap().0
            };
            let fd = finite_diff_grad(f, &disc.flatten(), 1e-5).unwrap();
            let err = grad_rel_err(&grads.flatten(), &fd);
            assert!(err < 1e-4, "seed {seed}: disc grad rel err {err}");
        }
    }

    #[test]
    fn indistinguishable_classes_floor_the_loss() {
        let mut disc = tiny_disc(7);
        let x = batch(8, 32);
        let mut adam = AdamState::new(disc.param_count());
        let mut bce = 0.0;
        for _ in 0..500 {
            let (loss, grads) = disc_loss_grad(&disc, &x, &x).unwrap();
            bce = loss;
            let mut flat = disc.flatten();
            adam_step(&mut adam, &mut flat, &grads.flatten(), 1e-3).unwrap();
            disc.unflatten_from(&flat).unwrap();
        }
        assert!(bce >= 1.38, "bce on identical classes {bce}");
    }

    #[test]
    fn w_loss_orthogonal_has_zero_penalty() {
        let data = small_dataset(9, 64);
        let rep = Reparam::new(random_orthogonal(10, 6)).unwrap();
        let za: Vec<[f64; 6]> = data.entangled[..32].to_vec();
        let zb: Vec<[f64; 6]> = data.entangled[32..64].to_vec();
        let masks: Vec<MixMask> = (0..32)
            .map(|i| sample_mask_with(&mut rng::stream(i), 3, MaskPolicy::Proper).unwrap())
            .collect();

        let disc_zero = MlpParams::zeros(
            &DISC_SIZES,
            &[Activation::Relu, Activation::Relu, Activation::Identity],
        )
        .unwrap();
        let (loss, grad) = w_loss_grad(
            &rep,
            &za,
            &zb,
            &masks,
            &disc_zero,
            &data.spec.mixing,
            1e-2,
        )
        .unwrap();
        // Constant D = 1/2: adversarial term is ln 2, input grads vanish, and
        // an orthogonal W zeroes the regularizer too.
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grad.max_abs() < 1e-12, "grad should be pure regularizer (zero here)");
    }

    #[test]
    fn w_grads_match_finite_differences() {
        let data = small_dataset(11, 64);
        let mut stream = rng::stream(12);
        let mut checked = 0;
        let mut attempt = 0u64;
        while checked < 10 {
            attempt += 1;
            let disc = tiny_disc(400 + attempt);
            let mut w = Matrix::identity(6);
            for v in w.data_mut() {
                *v += 0.1 * stream.sample::<f64, _>(StandardNormal);
            }
            let rep = Reparam::new(w).unwrap();
            let za: Vec<[f64; 6]> = (0..8).map(|i| data.entangled[i]).collect();
            let zb: Vec<[f64; 6]> = (8..16).map(|i| data.entangled[i]).collect();
            let masks: Vec<MixMask> = (0..8)
                .map(|_| sample_mask_with(&mut stream, 3, MaskPolicy::IidHalf).unwrap())
                .collect();

            // Skip configurations whose recombinations land near a ReLU kink.
            let mut xhat = Matrix::zeros(8, 4);
            for (i, ((a, b), m)) in za.iter().zip(&zb).zip(&masks).enumerate() {
                let obs = reparam_recombine_decode(a, b, m, &rep, &data.spec.mixing).unwrap();
                xhat.row_mut(i).copy_from_slice(obs.as_slice());
            }
            if disc.relu_kink_distance(&xhat).unwrap() < 1e-3 {
                continue;
            }
            checked += 1;

            let (_, grad) = w_loss_grad(
                &rep,
                &za,
                &zb,
                &masks,
                &disc,
                &data.spec.mixing,
                1e-2,
            )
            .unwrap();

            let mixing = data.spec.mixing.clone();
            let (za_c, zb_c, masks_c, disc_c) = (za.clone(), zb.clone(), masks.clone(), disc.clone());
            let f = move |w_flat: &[f64]| {
                let rep = Reparam::new(Matrix::new(6, 6, w_flat.to_vec()).unwrap()).unwrap();
                w_loss_grad(&rep, &za_c, &zb_c, &masks_c, &disc_c, &mixing, 1e-2)
                    .unwrap()
                    .0
            };
            let fd = finite_diff_grad(f, rep.w().data(), 1e-5).unwrap();
            let err = grad_rel_err(grad.data(), &fd);
            assert!(err < 1e-4, "attempt {attempt}: W grad rel err {err}");
        }
    }

    #[test]
    fn zero_iterations_is_a_no_op() {
        let data = small_dataset(13, 300);
        let mut config = SynthTrainConfig::with_seeds(TrainSeeds {
            init: 1,
            masks: 2,
            batches: 3,
        });
        config.iterations = 0;
        config.batch_size = 64;
        config.eval_pairs = 200;
        let (rep, _, report) = train_synthetic(&config, &data).unwrap();
        assert!(report.disc_losses.is_empty());
        assert!(report.w_losses.is_empty());

        // W equals its initialization: identity + 0.01 noise.
        let dev = rep.w().max_abs_diff(&Matrix::identity(6));
        assert!(dev > 0.0 && dev < 0.06, "init deviation {dev}");
        assert_eq!(report.initial_metrics, report.final_metrics);
    }

    #[test]
    fn short_run_is_deterministic_and_finite() {
        let data = small_dataset(14, 500);
        let mut config = SynthTrainConfig::with_seeds(TrainSeeds {
            init: 4,
            masks: 5,
            batches: 6,
        });
        config.iterations = 50;
        config.batch_size = 64;
        config.eval_pairs = 300;
        config.heldout_every = 25;
        config.heldout_pairs = 64;

        let (rep_a, disc_a, rep_report_a) = train_synthetic(&config, &data).unwrap();
        let (rep_b, disc_b, rep_report_b) = train_synthetic(&config, &data).unwrap();
        assert_eq!(rep_a.w().data(), rep_b.w().data());
        assert_eq!(disc_a.flatten(), disc_b.flatten());
        assert_eq!(rep_report_a.disc_losses, rep_report_b.disc_losses);
        assert_eq!(rep_report_a.w_losses, rep_report_b.w_losses);
        assert_eq!(rep_report_a.final_metrics, rep_report_b.final_metrics);
        assert_eq!(rep_report_a.heldout.len(), 2);
        assert!(rep_report_a.disc_losses.iter().all(|v| v.is_finite()));
        assert!(rep_report_a.w_losses.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_undersized_dataset() {
        let data = small_dataset(15, 100);
        let config = SynthTrainConfig::with_seeds(TrainSeeds {
            init: 1,
            masks: 2,
            batches: 3,
        });
        assert!(train_synthetic(&config, &data).is_err());
    }
}
