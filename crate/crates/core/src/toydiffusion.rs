//! Latent-conditioned denoising diffusion on the 4-D synthetic observations.
//!
//! An encoder maps each observation to three 2-D latent blocks; a shared
//! denoiser predicts x₀ from a noisy input conditioned on one block at a time,
//! and predictions average over blocks. Training alternates a discriminator
//! step on single-source vs latent-recombined predictions with a generator
//! step on reconstruction plus a weighted adversarial term. Sampling is
//! deterministic DDIM over an evenly spaced timestep subsequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mlp::{Activation, ForwardCache, MlpGrads, MlpParams};
use crate::numerics::{adam_step, AdamState, Matrix};
use crate::recombine::{sample_mask_with, MaskPolicy, MixMask};
use crate::rng;
use crate::synthdata::Dataset;
use crate::synthtrain::disc_loss_grad;
use crate::Result;

/// Latent blocks per observation.
pub const LATENT_BLOCKS: usize = 3;
/// Coordinates per latent block.
pub const BLOCK_DIM: usize = 2;
/// Observation dimension.
pub const X_DIM: usize = 4;
/// Sinusoidal timestep embedding width.
pub const T_EMBED_DIM: usize = 8;
/// Denoiser input width: observation, t-embedding, one latent block.
pub const DEN_INPUT_DIM: usize = X_DIM + T_EMBED_DIM + BLOCK_DIM;

const MIN_STEP_RATIO: f64 = 0.001;

/// Cumulative noise schedule ᾱ₀..ᾱ_T with ᾱ₀ = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    t_max: usize,
    alpha_bar: Vec<f64>,
    offset: f64,
}

impl Schedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// ᾱ_t for 0 ≤ t ≤ T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Rebuilds a schedule from stored parts, revalidating the table.
    pub fn from_parts(t_max: usize, alpha_bar: Vec<f64>, offset: f64) -> Result<Self> {
        let schedule = Self {
            t_max,
            alpha_bar,
            offset,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn alpha_bar_table(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.len() != self.t_max + 1 || self.t_max < 2 {
            return Err(Error::InvalidConfig(format!(
                "schedule needs T ≥ 2 and T+1 entries, got T = {} with {}",
                self.t_max,
                self.alpha_bar.len()
            )));
        }
        if self.alpha_bar[0] != 1.0 {
            return Err(Error::InvalidConfig("schedule must start at ᾱ₀ = 1".into()));
        }
        for t in 1..=self.t_max {
            if self.alpha_bar[t] >= self.alpha_bar[t - 1] {
                return Err(Error::InvalidConfig(format!(
                    "schedule not strictly decreasing at t = {t}"
                )));
            }
        }
        let last = self.alpha_bar[self.t_max];
        if last <= 0.0 || last >= 0.05 {
            return Err(Error::InvalidConfig(format!(
                "terminal ᾱ_T = {last} outside (0, 0.05)"
            )));
        }
        Ok(())
    }
}

/// Squared-cosine schedule with small-offset warm start and a per-step
/// ratio floor that keeps ᾱ strictly positive through t = T.
pub fn cosine_schedule(t_max: usize, s: f64) -> Result<Schedule> {
    if t_max < 2 {
        return Err(Error::InvalidConfig(format!(
            "schedule needs T ≥ 2, got {t_max}"
        )));
    }
    if s <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "schedule offset must be positive, got {s}"
        )));
    }
    let g = |t: f64| {
        let angle = ((t / t_max as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
        angle.cos().powi(2)
    };
    let g0 = g(0.0);
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    for t in 1..=t_max {
        let raw = g(t as f64) / g0;
        let ratio = (raw / alpha_bar[t - 1]).max(MIN_STEP_RATIO);
        alpha_bar.push(alpha_bar[t - 1] * ratio);
    }
    let schedule = Schedule {
        t_max,
        alpha_bar,
        offset: s,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
pub fn forward_diffuse(
    x0: &[f64; X_DIM],
    t: usize,
    eps: &[f64; X_DIM],
    sched: &Schedule,
) -> Result<[f64; X_DIM]> {
    if t > sched.t_max() {
        return Err(Error::InvalidConfig(format!(
            "timestep {t} beyond schedule end {}",
            sched.t_max()
        )));
    }
    let ab = sched.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    let mut out = [0.0; X_DIM];
    for i in 0..X_DIM {
        out[i] = signal * x0[i] + noise * eps[i];
    }
    Ok(out)
}

/// Sinusoidal features of t/T at four geometrically spaced frequencies.
pub fn t_embedding(t: usize, t_max: usize) -> [f64; T_EMBED_DIM] {
    let u = t as f64 / t_max as f64;
    let mut out = [0.0; T_EMBED_DIM];
    for j in 0..T_EMBED_DIM / 2 {
        let freq = (t_max as f64).powf(j as f64 / (T_EMBED_DIM / 2 - 1) as f64);
        out[2 * j] = (u * freq).sin();
        out[2 * j + 1] = (u * freq).cos();
    }
    out
}

/// Observation encoder producing the concatenated latent blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    pub mlp: MlpParams,
}

impl EncoderParams {
    pub fn new(mlp: MlpParams) -> Result<Self> {
        if mlp.input_dim() != X_DIM || mlp.output_dim() != LATENT_BLOCKS * BLOCK_DIM {
            return Err(Error::DimensionMismatch(format!(
                "encoder must map {X_DIM} -> {}, got {} -> {}",
                LATENT_BLOCKS * BLOCK_DIM,
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn he_init(hidden: usize, seed: u64) -> Self {
        let mlp = MlpParams::he_init(
            &[X_DIM, hidden, hidden, LATENT_BLOCKS * BLOCK_DIM],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            seed,
        )
        .expect("fixed architecture");
        Self { mlp }
    }
}

/// Single-block conditional denoiser predicting x₀.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub mlp: MlpParams,
}

impl DenoiserParams {
    pub fn new(mlp: MlpParams) -> Result<Self> {
        if mlp.input_dim() != DEN_INPUT_DIM || mlp.output_dim() != X_DIM {
            return Err(Error::DimensionMismatch(format!(
                "denoiser must map {DEN_INPUT_DIM} -> {X_DIM}, got {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn he_init(hidden: usize, seed: u64) -> Self {
        let mlp = MlpParams::he_init(
            &[DEN_INPUT_DIM, hidden, hidden, X_DIM],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            seed,
        )
        .expect("fixed architecture");
        Self { mlp }
    }
}

/// Batched encoder forward pass.
pub fn encode(enc: &EncoderParams, x: &Matrix) -> Result<Matrix> {
    Ok(enc.mlp.forward(x)?.output().clone())
}

/// Encoder output for one observation, split into blocks.
pub fn encode_one(enc: &EncoderParams, x: &[f64]) -> Result<[[f64; BLOCK_DIM]; LATENT_BLOCKS]> {
    let z = enc.mlp.forward_vec(x)?;
    Ok(split_blocks(&z))
}

/// Splits a concatenated latent vector into contiguous blocks.
pub fn split_blocks(z: &[f64]) -> [[f64; BLOCK_DIM]; LATENT_BLOCKS] {
    let mut out = [[0.0; BLOCK_DIM]; LATENT_BLOCKS];
    for (k, block) in out.iter_mut().enumerate() {
        block.copy_from_slice(&z[k * BLOCK_DIM..(k + 1) * BLOCK_DIM]);
    }
    out
}

fn den_input(x_t: &[f64], t: usize, t_max: usize, z: &[f64]) -> [f64; DEN_INPUT_DIM] {
    let mut input = [0.0; DEN_INPUT_DIM];
    input[..X_DIM].copy_from_slice(x_t);
    input[X_DIM..X_DIM + T_EMBED_DIM].copy_from_slice(&t_embedding(t, t_max));
    input[X_DIM + T_EMBED_DIM..].copy_from_slice(z);
    input
}

/// Mean over the per-latent denoiser passes.
pub fn denoise_composed(
    den: &DenoiserParams,
    x_t: &[f64; X_DIM],
    t: usize,
    t_max: usize,
    latents: &[[f64; BLOCK_DIM]],
) -> Result<[f64; X_DIM]> {
    if latents.is_empty() {
        return Err(Error::EmptyLatentSet);
    }
    let mut out = [0.0; X_DIM];
    for z in latents {
        let pred = den.mlp.forward_vec(&den_input(x_t, t, t_max, z))?;
        for i in 0..X_DIM {
            out[i] += pred[i] / latents.len() as f64;
        }
    }
    Ok(out)
}

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; X_DIM],
    pub std: [f64; X_DIM],
}

impl Standardizer {
    pub fn fit(observations: &Matrix) -> Result<Self> {
        if observations.cols() != X_DIM || observations.rows() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "standardizer needs an n×{X_DIM} batch with n ≥ 2, got {}×{}",
                observations.rows(),
                observations.cols()
            )));
        }
        let n = observations.rows() as f64;
        let mut mean = [0.0; X_DIM];
        let mut std = [0.0; X_DIM];
        for j in 0..X_DIM {
            let col = observations.column(j);
            mean[j] = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = var.sqrt();
            if std[j] < 1e-12 {
                return Err(Error::ZeroVariance(format!("observation coordinate {j}")));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64; X_DIM]) -> [f64; X_DIM] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert(&self, x: &[f64; X_DIM]) -> [f64; X_DIM] {
        std::array::from_fn(|i| self.mean[i] + self.std[i] * x[i])
    }

    pub fn apply_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for j in 0..X_DIM {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Seeds for parameter init, per-sample noise, and batch selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionSeeds {
    pub init: u64,
    pub noise: u64,
    pub batches: u64,
}

/// Hyperparameters of one diffusion training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub t_max: usize,
    pub schedule_offset: f64,
    pub lambda: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub ddim_steps: usize,
    pub hidden: usize,
    pub mask_policy: MaskPolicy,
    pub seeds: DiffusionSeeds,
}

impl DiffusionConfig {
    pub fn with_seeds(seeds: DiffusionSeeds) -> Self {
        Self {
            t_max: 1000,
            schedule_offset: 0.008,
            lambda: 0.0,
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            batch_size: 128,
            iterations: 5000,
            ddim_steps: 50,
            hidden: 128,
            mask_policy: MaskPolicy::IidHalf,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "discriminator weight must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.t_max {
            return Err(Error::InvalidConfig(format!(
                "ddim steps must lie in 1..=T, got {} with T = {}",
                self.ddim_steps, self.t_max
            )));
        }
        if self.lr_gen < 0.0 || self.lr_disc < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "batch size and hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything mutated by [`train_step`].
pub struct DiffusionState {
    pub config: DiffusionConfig,
    pub schedule: Schedule,
    pub standardizer: Standardizer,
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    pub disc: MlpParams,
    enc_adam: AdamState,
    den_adam: AdamState,
    disc_adam: AdamState,
    noise_stream: ChaCha8Rng,
    mask_stream: ChaCha8Rng,
}

/// Losses from one alternating step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_rec: f64,
    pub l_adv: f64,
    pub disc_loss: f64,
}

/// One training-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub l_rec: f64,
    pub l_adv: f64,
    pub disc_loss: f64,
}

/// Renders training curves as CSV.
pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("iteration,l_rec,l_adv,disc_loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.iteration, r.l_rec, r.l_adv, r.disc_loss));
    }
    out
}

pub fn init_state(config: &DiffusionConfig, data: &Dataset) -> Result<DiffusionState> {
    config.validate()?;
    let schedule = cosine_schedule(config.t_max, config.schedule_offset)?;
    let standardizer = Standardizer::fit(&data.observation_matrix())?;
    let encoder = EncoderParams::he_init(
        config.hidden,
        rng::split_seed(config.seeds.init, "encoder-init"),
    );
    let denoiser = DenoiserParams::he_init(
        config.hidden,
        rng::split_seed(config.seeds.init, "denoiser-init"),
    );
    let disc = crate::synthtrain::disc_init(rng::split_seed(config.seeds.init, "disc-init"));
    let enc_adam = AdamState::new(encoder.mlp.param_count());
    let den_adam = AdamState::new(denoiser.mlp.param_count());
    let disc_adam = AdamState::new(disc.param_count());
    Ok(DiffusionState {
        config: config.clone(),
        schedule,
        standardizer,
        encoder,
        denoiser,
        disc,
        enc_adam,
        den_adam,
        disc_adam,
        noise_stream: rng::stream(config.seeds.noise),
        mask_stream: rng::stream(rng::split_seed(config.seeds.noise, "masks")),
    })
}

/// Per-sample draws consumed by one step.
struct StepDraws {
    ts: Vec<usize>,
    eps: Vec<[f64; X_DIM]>,
    masks: Vec<MixMask>,
}

fn draw_step(state: &mut DiffusionState, n: usize) -> Result<StepDraws> {
    let t_max = state.schedule.t_max();
    let mut ts = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        ts.push(state.noise_stream.random_range(1..=t_max));
        eps.push(std::array::from_fn(|_| {
            state.noise_stream.sample::<f64, _>(StandardNormal)
        }));
        masks.push(sample_mask_with(
            &mut state.mask_stream,
            LATENT_BLOCKS,
            state.config.mask_policy,
        )?);
    }
    Ok(StepDraws { ts, eps, masks })
}

/// Denoiser inputs for one latent-conditioned pass over a batch.
fn block_inputs(x_t: &Matrix, ts: &[usize], t_max: usize, z_block: &Matrix) -> Matrix {
    let n = x_t.rows();
    let mut inputs = Matrix::zeros(n, DEN_INPUT_DIM);
    for i in 0..n {
        inputs.row_mut(i).copy_from_slice(&den_input(
            x_t.row(i),
            ts[i],
            t_max,
            z_block.row(i),
        ));
    }
    inputs
}

fn block_slice(z: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), BLOCK_DIM);
    for i in 0..z.rows() {
        out.row_mut(i)
            .copy_from_slice(&z.row(i)[k * BLOCK_DIM..(k + 1) * BLOCK_DIM]);
    }
    out
}

struct ComposedPass {
    pred: Matrix,
    caches: Vec<ForwardCache>,
}

fn composed_pass(den: &DenoiserParams, inputs: &[Matrix]) -> Result<ComposedPass> {
    let n = inputs[0].rows();
    let mut pred = Matrix::zeros(n, X_DIM);
    let mut caches = Vec::with_capacity(inputs.len());
    for input in inputs {
        let cache = den.mlp.forward(input)?;
        for (acc, v) in pred.data_mut().iter_mut().zip(cache.output().data()) {
            *acc += v / inputs.len() as f64;
        }
        caches.push(cache);
    }
    Ok(ComposedPass { pred, caches })
}

/// Forward pieces shared by the discriminator and generator updates.
struct StepForward {
    xa_std: Matrix,
    enc_cache_a: ForwardCache,
    enc_cache_b: ForwardCache,
    single: ComposedPass,
    recomb: ComposedPass,
}

fn step_forward(
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    standardizer: &Standardizer,
    schedule: &Schedule,
    batch_a: &Matrix,
    batch_b: &Matrix,
    draws: &StepDraws,
) -> Result<StepForward> {
    let n = batch_a.rows();
    if batch_b.rows() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "paired batches must be equal-sized and nonempty, got {} and {}",
            n,
            batch_b.rows()
        )));
    }
    let xa_std = standardizer.apply_matrix(batch_a)?;
    let xb_std = standardizer.apply_matrix(batch_b)?;
    let enc_cache_a = encoder.mlp.forward(&xa_std)?;
    let enc_cache_b = encoder.mlp.forward(&xb_std)?;
    let za = enc_cache_a.output().clone();
    let zb = enc_cache_b.output().clone();

    let mut z_tilde = Matrix::zeros(n, LATENT_BLOCKS * BLOCK_DIM);
    for i in 0..n {
        for k in 0..LATENT_BLOCKS {
            let src = if draws.masks[i].bit(k) { &za } else { &zb };
            for c in 0..BLOCK_DIM {
                z_tilde.set(i, k * BLOCK_DIM + c, src.get(i, k * BLOCK_DIM + c));
            }
        }
    }

    let mut x_t = Matrix::zeros(n, X_DIM);
    for i in 0..n {
        let x0: [f64; X_DIM] = xa_std.row(i).try_into().expect("x rows are 4-wide");
        let noisy = forward_diffuse(&x0, draws.ts[i], &draws.eps[i], schedule)?;
        x_t.row_mut(i).copy_from_slice(&noisy);
    }

    let t_max = schedule.t_max();
    let single_inputs: Vec<Matrix> = (0..LATENT_BLOCKS)
        .map(|k| block_inputs(&x_t, &draws.ts, t_max, &block_slice(&za, k)))
        .collect();
    let recomb_inputs: Vec<Matrix> = (0..LATENT_BLOCKS)
        .map(|k| block_inputs(&x_t, &draws.ts, t_max, &block_slice(&z_tilde, k)))
        .collect();
    let single = composed_pass(denoiser, &single_inputs)?;
    let recomb = composed_pass(denoiser, &recomb_inputs)?;
    Ok(StepForward {
        xa_std,
        enc_cache_a,
        enc_cache_b,
        single,
        recomb,
    })
}

/// Gradients of `L_rec + λ·(−log D(x̂_recomb))` for encoder and denoiser.
struct GeneratorEval {
    l_rec: f64,
    l_adv: f64,
    enc_grads: MlpGrads,
    den_grads: MlpGrads,
}

fn generator_eval(
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    disc: &MlpParams,
    fwd: &StepForward,
    draws: &StepDraws,
    lambda: f64,
) -> Result<GeneratorEval> {
    let n = fwd.xa_std.rows();
    let nf = n as f64;
    let k_count = LATENT_BLOCKS as f64;

    let mut l_rec = 0.0;
    let mut d_single = Matrix::zeros(n, X_DIM);
    for i in 0..n {
        for j in 0..X_DIM {
            let diff = fwd.single.pred.get(i, j) - fwd.xa_std.get(i, j);
            l_rec += diff * diff / nf;
            d_single.set(i, j, 2.0 * diff / nf);
        }
    }

    let mut den_grads = MlpGrads::zeros_like(&denoiser.mlp);
    let mut za_grad = Matrix::zeros(n, LATENT_BLOCKS * BLOCK_DIM);
    let mut zb_grad = Matrix::zeros(n, LATENT_BLOCKS * BLOCK_DIM);

    let d_single_scaled = d_single.scale(1.0 / k_count);
    for k in 0..LATENT_BLOCKS {
        let (grads, d_input) = denoiser
            .mlp
            .backward(&fwd.single.caches[k], &d_single_scaled)?;
        den_grads.add_scaled(&grads, 1.0);
        for i in 0..n {
            for c in 0..BLOCK_DIM {
                let v = d_input.get(i, X_DIM + T_EMBED_DIM + c);
                let col = k * BLOCK_DIM + c;
                za_grad.set(i, col, za_grad.get(i, col) + v);
            }
        }
    }

    let mut l_adv = 0.0;
    if lambda > 0.0 {
        let disc_cache = disc.forward(&fwd.recomb.pred)?;
        let mut d_logit = Matrix::zeros(n, 1);
        for i in 0..n {
            let p = crate::synthtrain::clamped_prob(disc_cache.output().get(i, 0));
            l_adv -= p.ln() / nf;
            d_logit.set(i, 0, lambda * (p - 1.0) / nf);
        }
        let (_, d_recomb) = disc.backward(&disc_cache, &d_logit)?;
        let d_recomb_scaled = d_recomb.scale(1.0 / k_count);
        for k in 0..LATENT_BLOCKS {
            let (grads, d_input) = denoiser
                .mlp
                .backward(&fwd.recomb.caches[k], &d_recomb_scaled)?;
            den_grads.add_scaled(&grads, 1.0);
            for i in 0..n {
                for c in 0..BLOCK_DIM {
                    let v = d_input.get(i, X_DIM + T_EMBED_DIM + c);
                    let col = k * BLOCK_DIM + c;
                    let target = if draws.masks[i].bit(k) {
                        &mut za_grad
                    } else {
                        &mut zb_grad
                    };
                    target.set(i, col, target.get(i, col) + v);
                }
            }
        }
    }

    let (enc_grads_a, _) = encoder.mlp.backward(&fwd.enc_cache_a, &za_grad)?;
    let (enc_grads_b, _) = encoder.mlp.backward(&fwd.enc_cache_b, &zb_grad)?;
    let mut enc_grads = enc_grads_a;
    enc_grads.add_scaled(&enc_grads_b, 1.0);
    Ok(GeneratorEval {
        l_rec,
        l_adv,
        enc_grads,
        den_grads,
    })
}

/// Generator objective `L_rec + λ·L_adv` evaluated at caller-supplied draws,
/// with its analytic parameter gradients.
pub struct GeneratorProbe {
    pub loss: f64,
    pub enc_grads: MlpGrads,
    pub den_grads: MlpGrads,
    /// Smallest pre-activation magnitude across every ReLU the loss touches.
    pub kink_distance: f64,
}

/// Deterministic single-step generator evaluation. `ts`, `eps`, and `masks`
/// fix the per-sample noise draws, so repeated calls at the same inputs are
/// suitable for finite-difference comparison.
pub fn generator_probe(
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    disc: &MlpParams,
    standardizer: &Standardizer,
    schedule: &Schedule,
    batch_a: &Matrix,
    batch_b: &Matrix,
    ts: &[usize],
    eps: &[[f64; X_DIM]],
    masks: &[MixMask],
    lambda: f64,
) -> Result<GeneratorProbe> {
    let n = batch_a.rows();
    if ts.len() != n || eps.len() != n || masks.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "probe draws must match the batch: {n} rows vs {} / {} / {}",
            ts.len(),
            eps.len(),
            masks.len()
        )));
    }
    let draws = StepDraws {
        ts: ts.to_vec(),
        eps: eps.to_vec(),
        masks: masks.to_vec(),
    };
    let fwd = step_forward(encoder, denoiser, standardizer, schedule, batch_a, batch_b, &draws)?;

    let xb_std = standardizer.apply_matrix(batch_b)?;
    let mut kink = encoder
        .mlp
        .relu_kink_distance(&fwd.xa_std)?
        .min(encoder.mlp.relu_kink_distance(&xb_std)?);
    for cache in fwd.single.caches.iter().chain(fwd.recomb.caches.iter()) {
        kink = kink.min(denoiser.mlp.relu_kink_distance(cache.input())?);
    }
    if lambda > 0.0 {
        kink = kink.min(disc.relu_kink_distance(&fwd.recomb.pred)?);
    }

    let eval = generator_eval(encoder, denoiser, disc, &fwd, &draws, lambda)?;
    Ok(GeneratorProbe {
        loss: eval.l_rec + lambda * eval.l_adv,
        enc_grads: eval.enc_grads,
        den_grads: eval.den_grads,
        kink_distance: kink,
    })
}

/// One alternating step: discriminator BCE update on single-vs-recombined
/// predictions, then a generator update on reconstruction plus the weighted
/// adversarial term. At λ = 0 the generator update never reads the
/// discriminator.
pub fn train_step(
    state: &mut DiffusionState,
    batch_a: &Matrix,
    batch_b: &Matrix,
) -> Result<StepLosses> {
    let draws = draw_step(state, batch_a.rows())?;
    let fwd = step_forward(
        &state.encoder,
        &state.denoiser,
        &state.standardizer,
        &state.schedule,
        batch_a,
        batch_b,
        &draws,
    )?;

    let (disc_loss, disc_grads) = disc_loss_grad(&state.disc, &fwd.single.pred, &fwd.recomb.pred)?;
    if state.config.lr_disc > 0.0 {
        let mut flat = state.disc.flatten();
        adam_step(
            &mut state.disc_adam,
            &mut flat,
            &disc_grads.flatten(),
            state.config.lr_disc,
        )?;
        state.disc.unflatten_from(&flat)?;
    }

    let eval = generator_eval(
        &state.encoder,
        &state.denoiser,
        &state.disc,
        &fwd,
        &draws,
        state.config.lambda,
    )?;
    if state.config.lr_gen > 0.0 {
        let mut enc_flat = state.encoder.mlp.flatten();
        adam_step(
            &mut state.enc_adam,
            &mut enc_flat,
            &eval.enc_grads.flatten(),
            state.config.lr_gen,
        )?;
        state.encoder.mlp.unflatten_from(&enc_flat)?;
        let mut den_flat = state.denoiser.mlp.flatten();
        adam_step(
            &mut state.den_adam,
            &mut den_flat,
            &eval.den_grads.flatten(),
            state.config.lr_gen,
        )?;
        state.denoiser.mlp.unflatten_from(&den_flat)?;
    }
    Ok(StepLosses {
        l_rec: eval.l_rec,
        l_adv: eval.l_adv,
        disc_loss,
    })
}

/// Runs the full training loop, recording one curve row per iteration.
pub fn train(config: &DiffusionConfig, data: &Dataset) -> Result<(DiffusionState, Vec<CurveRow>)> {
    let mut state = init_state(config, data)?;
    if data.len() < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "dataset of {} samples is smaller than batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    let mut batch_stream = rng::stream(config.seeds.batches);
    let mut curves = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let (batch_a, batch_b) = draw_batches(&mut batch_stream, data, config.batch_size);
        let losses = train_step(&mut state, &batch_a, &batch_b).map_err(|cause| {
            Error::TrainingAborted {
                iteration,
                cause: Box::new(cause),
            }
        })?;
        curves.push(CurveRow {
            iteration,
            l_rec: losses.l_rec,
            l_adv: losses.l_adv,
            disc_loss: losses.disc_loss,
        });
    }
    Ok((state, curves))
}

fn draw_batches(stream: &mut impl Rng, data: &Dataset, batch_size: usize) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(batch_size, X_DIM);
    let mut b = Matrix::zeros(batch_size, X_DIM);
    for i in 0..batch_size {
        let ia = stream.random_range(0..data.len());
        let ib = stream.random_range(0..data.len());
        a.row_mut(i).copy_from_slice(data.observations[ia].as_slice());
        b.row_mut(i).copy_from_slice(data.observations[ib].as_slice());
    }
    (a, b)
}

/// Descending DDIM timestep grid: round(j·T/steps) for j = steps..0.
pub fn ddim_grid(t_max: usize, steps: usize) -> Vec<usize> {
    (0..=steps)
        .rev()
        .map(|j| ((j * t_max) as f64 / steps as f64).round() as usize)
        .collect()
}

/// Deterministic DDIM (η = 0) from a given terminal state, in model space.
pub fn ddim_sample_from(
    den: &DenoiserParams,
    x_init: [f64; X_DIM],
    latents: &[[f64; BLOCK_DIM]],
    sched: &Schedule,
    steps: usize,
) -> Result<[f64; X_DIM]> {
    if steps == 0 || steps > sched.t_max() {
        return Err(Error::InvalidConfig(format!(
            "ddim steps must lie in 1..=T, got {steps} with T = {}",
            sched.t_max()
        )));
    }
    let grid = ddim_grid(sched.t_max(), steps);
    let mut x = x_init;
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let x0_hat = denoise_composed(den, &x, t, sched.t_max(), latents)?;
        let ab_t = sched.alpha_bar(t);
        let ab_next = sched.alpha_bar(t_next);
        let noise_scale = (1.0 - ab_next).sqrt() / (1.0 - ab_t).sqrt();
        for i in 0..X_DIM {
            let eps_dir = x[i] - ab_t.sqrt() * x0_hat[i];
            x[i] = ab_next.sqrt() * x0_hat[i] + noise_scale * eps_dir;
        }
    }
    Ok(x)
}

/// DDIM from a seeded standard-Gaussian terminal state.
pub fn ddim_sample(
    den: &DenoiserParams,
    latents: &[[f64; BLOCK_DIM]],
    sched: &Schedule,
    steps: usize,
    seed: u64,
) -> Result<[f64; X_DIM]> {
    let mut stream = rng::stream(seed);
    let x_init = std::array::from_fn(|_| stream.sample::<f64, _>(StandardNormal));
    ddim_sample_from(den, x_init, latents, sched, steps)
}

/// Which latent multiset conditions an inference run.
#[derive(Debug, Clone)]
pub enum InferenceMode {
    /// A single block on its own.
    Decompose([f64; BLOCK_DIM]),
    /// All blocks from one source.
    Reconstruct([[f64; BLOCK_DIM]; LATENT_BLOCKS]),
    /// Blockwise selection between two sources.
    Recombine {
        za: [[f64; BLOCK_DIM]; LATENT_BLOCKS],
        zb: [[f64; BLOCK_DIM]; LATENT_BLOCKS],
        mask: MixMask,
    },
    /// All 2K blocks from both sources.
    Additive {
        za: [[f64; BLOCK_DIM]; LATENT_BLOCKS],
        zb: [[f64; BLOCK_DIM]; LATENT_BLOCKS],
    },
}

impl InferenceMode {
    /// The latent multiset the composed denoiser averages over.
    pub fn latents(&self) -> Result<Vec<[f64; BLOCK_DIM]>> {
        let out = match self {
            InferenceMode::Decompose(z) => vec![*z],
            InferenceMode::Reconstruct(z) => z.to_vec(),
            InferenceMode::Recombine { za, zb, mask } => {
                if mask.k() != LATENT_BLOCKS {
                    return Err(Error::InvalidMaskPolicy {
                        policy: "recombine".into(),
                        min_k: LATENT_BLOCKS,
                        k: mask.k(),
                    });
                }
                (0..LATENT_BLOCKS)
                    .map(|k| if mask.bit(k) { za[k] } else { zb[k] })
                    .collect()
            }
            InferenceMode::Additive { za, zb } => za.iter().chain(zb.iter()).copied().collect(),
        };
        if out.is_empty() {
            return Err(Error::EmptyLatentSet);
        }
        Ok(out)
    }
}

/// DDIM inference under the given latent-conditioning mode, in model space.
pub fn run_inference(
    den: &DenoiserParams,
    mode: &InferenceMode,
    sched: &Schedule,
    steps: usize,
    seed: u64,
) -> Result<[f64; X_DIM]> {
    ddim_sample(den, &mode.latents()?, sched, steps, seed)
}

/// Draws recombined DDIM samples in observation space.
pub fn sample_recombined(
    state: &DiffusionState,
    data: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Matrix> {
    let mut stream = rng::stream(seed);
    let mut out = Matrix::zeros(count, X_DIM);
    for row in 0..count {
        let i = stream.random_range(0..data.len());
        let j = stream.random_range(0..data.len());
        let mask = sample_mask_with(&mut stream, LATENT_BLOCKS, MaskPolicy::Proper)?;
        let xa = state.standardizer.apply(&data.observations[i].0);
        let xb = state.standardizer.apply(&data.observations[j].0);
        let za = encode_one(&state.encoder, &xa)?;
        let zb = encode_one(&state.encoder, &xb)?;
        let latents: Vec<[f64; BLOCK_DIM]> = (0..LATENT_BLOCKS)
            .map(|k| if mask.bit(k) { za[k] } else { zb[k] })
            .collect();
        let x_init = std::array::from_fn(|_| stream.sample::<f64, _>(StandardNormal));
        let sample = ddim_sample_from(
            &state.denoiser,
            x_init,
            &latents,
            &state.schedule,
            state.config.ddim_steps,
        )?;
        out.row_mut(row).copy_from_slice(&state.standardizer.invert(&sample));
    }
    Ok(out)
}

/// One sweep result row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub mahalanobis2: f64,
    pub frechet: f64,
    pub rec_first100: f64,
    pub rec_last100: f64,
}

/// Sweep over discriminator weights, all seeds recorded per λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub eval_samples: usize,
}

pub const SWEEP_CSV_HEADER: &str = "lambda,seed,mahalanobis2,frechet,rec_first100,rec_last100";

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.lambda, r.seed, r.mahalanobis2, r.frechet, r.rec_first100, r.rec_last100
            ));
        }
        out
    }

    /// Mean recombined Mahalanobis² across seeds at one λ.
    pub fn mean_mahalanobis(&self, lambda: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.lambda == lambda)
            .map(|r| r.mahalanobis2)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let slice = &values[range];
    slice.iter().sum::<f64>() / slice.len() as f64
}

/// Trains one run per (λ, seed) and evaluates recombined samples against the
/// real-data Gaussian reference.
pub fn lambda_sweep(
    data: &Dataset,
    lambdas: &[f64],
    base: &DiffusionConfig,
    protocol_seeds: &[u64],
    eval_samples: usize,
) -> Result<SweepReport> {
    if lambdas.is_empty() || protocol_seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one λ and one seed".into(),
        ));
    }
    let reference = crate::metrics::fit_gaussian(&data.observation_matrix())?;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        for &seed in protocol_seeds {
            let mut config = base.clone();
            config.lambda = lambda;
            config.seeds = DiffusionSeeds {
                init: rng::split_seed(seed, "diffusion-init"),
                noise: rng::split_seed(seed, "diffusion-noise"),
                batches: rng::split_seed(seed, "diffusion-batches"),
            };
            let (state, curves) = train(&config, data)?;
            let rec: Vec<f64> = curves.iter().map(|r| r.l_rec).collect();
            let head = rec.len().min(100);
            let tail_start = rec.len().saturating_sub(100);
            let samples =
                sample_recombined(&state, data, eval_samples, rng::split_seed(seed, "sweep-eval"))?;
            let sample_ref = crate::metrics::fit_gaussian(&samples)?;
            rows.push(SweepRow {
                lambda,
                seed,
                mahalanobis2: crate::metrics::mahalanobis2(&samples, &reference)?,
                frechet: crate::metrics::frechet_from_refs(&sample_ref, &reference)?,
                rec_first100: window_mean(&rec, 0..head),
                rec_last100: window_mean(&rec, tail_start..rec.len()),
            });
        }
    }
    Ok(SweepReport { rows, eval_samples })
}
