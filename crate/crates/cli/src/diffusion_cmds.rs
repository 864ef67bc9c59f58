//! Diffusion training, sampling, and λ-sweep commands.

use std::time::Instant;

use recomb_core::checkpoint::{load_diffusion, store_diffusion, Checkpoint, DiffusionArtifacts};
use recomb_core::recombine::MixMask;
use recomb_core::rng::split_seed;
use recomb_core::toydiffusion::{
    curves_csv, encode_one, lambda_sweep, run_inference, train, CurveRow, DiffusionConfig,
    DiffusionSeeds, InferenceMode, LATENT_BLOCKS, X_DIM,
};
use recomb_core::{Error, Result};
use serde_json::json;

use crate::report::{ensure_out_dir, write_report, write_text};
use crate::synth_cmds::load_dataset;
use crate::Ctx;

const DIFFUSION_BASE_KEYS: &[(&str, &str)] = &[
    ("paths.dataset", "dataset.csv"),
    ("paths.spec", "dataset.json"),
    ("diffusion.t-max", "1000"),
    ("diffusion.schedule-offset", "0.008"),
    ("diffusion.lr-gen", "0.001"),
    ("diffusion.lr-disc", "0.001"),
    ("diffusion.batch-size", "128"),
    ("diffusion.iterations", "5000"),
    ("diffusion.ddim-steps", "50"),
    ("diffusion.hidden", "128"),
    ("diffusion.mask-policy", "iid-half"),
];

pub fn train_diffusion_keys() -> Vec<(&'static str, &'static str)> {
    let mut keys = DIFFUSION_BASE_KEYS.to_vec();
    keys.push(("diffusion.lambda", "0"));
    keys
}

pub fn sample_keys() -> Vec<(&'static str, &'static str)> {
    vec![
        ("paths.dataset", "dataset.csv"),
        ("paths.spec", "dataset.json"),
        ("paths.checkpoint", "diffusion.rcmb"),
        ("sample.mode", "reconstruct"),
        ("sample.count", "100"),
        ("sample.steps", "50"),
        ("sample.block", "0"),
        ("sample.mask", "101"),
    ]
}

pub fn sweep_keys() -> Vec<(&'static str, &'static str)> {
    let mut keys = DIFFUSION_BASE_KEYS.to_vec();
    keys.push(("sweep.lambdas", "0,0.003,0.1"));
    keys.push(("sweep.protocol-seeds", "0,1,2"));
    keys.push(("sweep.eval-samples", "2000"));
    keys
}

fn diffusion_config_from(ctx: &Ctx, lambda: f64) -> Result<DiffusionConfig> {
    let mut config = DiffusionConfig::with_seeds(DiffusionSeeds {
        init: split_seed(ctx.seed, "diffusion-init"),
        noise: split_seed(ctx.seed, "diffusion-noise"),
        batches: split_seed(ctx.seed, "diffusion-batches"),
    });
    config.t_max = ctx.config.get_usize("diffusion.t-max")?;
    config.schedule_offset = ctx.config.get_f64("diffusion.schedule-offset")?;
    config.lambda = lambda;
    config.lr_gen = ctx.config.get_f64("diffusion.lr-gen")?;
    config.lr_disc = ctx.config.get_f64("diffusion.lr-disc")?;
    config.batch_size = ctx.config.get_usize("diffusion.batch-size")?;
    config.iterations = ctx.config.get_usize("diffusion.iterations")?;
    config.ddim_steps = ctx.config.get_usize("diffusion.ddim-steps")?;
    config.hidden = ctx.config.get_usize("diffusion.hidden")?;
    config.mask_policy = ctx.config.get_policy("diffusion.mask-policy")?;
    Ok(config)
}

fn loss_window_means(rows: &[CurveRow]) -> (f64, f64) {
    let window = rows.len().min(100);
    let first: f64 = rows.iter().take(window).map(|r| r.l_rec).sum::<f64>() / window as f64;
    let last: f64 = rows.iter().rev().take(window).map(|r| r.l_rec).sum::<f64>() / window as f64;
    (first, last)
}

pub fn cmd_train_diffusion(ctx: &Ctx) -> Result<()> {
    ensure_out_dir(&ctx.out)?;
    let data = load_dataset(ctx)?;
    let config = diffusion_config_from(ctx, ctx.config.get_f64("diffusion.lambda")?)?;
    let start = Instant::now();
    let (state, rows) = train(&config, &data)?;
    let wall = start.elapsed().as_secs_f64();

    let mut ck = store_diffusion(&state)?;
    ck.set_meta("global-seed", &ctx.seed.to_string());
    ck.save(ctx.out.join("diffusion.rcmb"))?;
    write_text(&ctx.out.join("train-diffusion-curves.csv"), &curves_csv(&rows))?;

    let (rec_first, rec_last) = loss_window_means(&rows);
    write_report(
        ctx,
        "train-diffusion",
        json!({
            "iterations": config.iterations,
            "lambda": config.lambda,
            "rec_first100": rec_first,
            "rec_last100": rec_last,
            "seeds": { "init": config.seeds.init, "noise": config.seeds.noise, "batches": config.seeds.batches },
        }),
        wall,
        "train-diffusion-report.json",
    )?;
    Ok(())
}

fn parse_mask(raw: &str) -> Result<MixMask> {
    if raw.len() != LATENT_BLOCKS || raw.chars().any(|c| c != '0' && c != '1') {
        return Err(Error::InvalidConfig(format!(
            "sample.mask must be {LATENT_BLOCKS} characters of 0/1, got {raw:?}"
        )));
    }
    Ok(MixMask::new(raw.chars().map(|c| c == '1').collect()))
}

fn rms(a: &[f64; X_DIM], b: &[f64; X_DIM]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / X_DIM as f64).sqrt()
}

pub fn cmd_sample(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    let data = load_dataset(ctx)?;
    let path = ctx.config.get_path("paths.checkpoint", &ctx.out)?;
    let arts: DiffusionArtifacts = load_diffusion(&Checkpoint::load(&path)?)?;
    let mode_name = ctx.config.get_string("sample.mode")?;
    let count = ctx.config.get_usize("sample.count")?;
    let steps = ctx.config.get_usize("sample.steps")?;
    let needs_pairs = matches!(mode_name.as_str(), "recombine" | "additive");
    let span = if needs_pairs { 2 * count } else { count };
    if count == 0 || span > data.len() {
        return Err(Error::InvalidConfig(format!(
            "sample.count {count} needs {span} dataset rows, have {}",
            data.len()
        )));
    }

    let encode_row = |i: usize| -> Result<[[f64; 2]; LATENT_BLOCKS]> {
        let std_x = arts.standardizer.apply(&data.observations[i].0);
        encode_one(&arts.encoder, &std_x)
    };

    let mut csv = String::new();
    let mut rms_values = Vec::new();
    let header: &str = if mode_name == "reconstruct" {
        "x0,x1,x2,x3,rms"
    } else {
        "x0,x1,x2,x3"
    };
    csv.push_str(header);
    csv.push('\n');
    for i in 0..count {
        let mode = match mode_name.as_str() {
            "decompose" => {
                let block = ctx.config.get_usize("sample.block")?;
                if block >= LATENT_BLOCKS {
                    return Err(Error::InvalidConfig(format!(
                        "sample.block must be below {LATENT_BLOCKS}, got {block}"
                    )));
                }
                InferenceMode::Decompose(encode_row(i)?[block])
            }
            "reconstruct" => InferenceMode::Reconstruct(encode_row(i)?),
            "recombine" => InferenceMode::Recombine {
                za: encode_row(i)?,
                zb: encode_row(i + count)?,
                mask: parse_mask(&ctx.config.get_string("sample.mask")?)?,
            },
            "additive" => InferenceMode::Additive {
                za: encode_row(i)?,
                zb: encode_row(i + count)?,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "sample.mode {other:?} is not one of decompose, reconstruct, recombine, additive"
                )))
            }
        };
        let noise_seed = split_seed(split_seed(ctx.seed, "sample-noise"), &format!("row-{i}"));
        let model_x = run_inference(&arts.denoiser, &mode, &arts.schedule, steps, noise_seed)?;
        let x = arts.standardizer.invert(&model_x);
        if mode_name == "reconstruct" {
            let err = rms(&x, &data.observations[i].0);
            rms_values.push(err);
            csv.push_str(&format!("{},{},{},{},{}\n", x[0], x[1], x[2], x[3], err));
        } else {
            csv.push_str(&format!("{},{},{},{}\n", x[0], x[1], x[2], x[3]));
        }
    }
    write_text(&ctx.out.join("samples.csv"), &csv)?;

    let median_rms = if rms_values.is_empty() {
        None
    } else {
        rms_values.sort_by(f64::total_cmp);
        Some(rms_values[rms_values.len() / 2])
    };
    write_report(
        ctx,
        "sample",
        json!({
            "mode": mode_name,
            "count": count,
            "steps": steps,
            "median_reconstruction_rms": median_rms,
        }),
        start.elapsed().as_secs_f64(),
        "sample-report.json",
    )?;
    Ok(())
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    let data = load_dataset(ctx)?;
    let lambdas = ctx.config.get_f64_list("sweep.lambdas")?;
    let protocol_seeds = ctx.config.get_u64_list("sweep.protocol-seeds")?;
    let eval_samples = ctx.config.get_usize("sweep.eval-samples")?;
    let base = diffusion_config_from(ctx, 0.0)?;

    let report = lambda_sweep(&data, &lambdas, &base, &protocol_seeds, eval_samples)?;
    write_text(&ctx.out.join("sweep.csv"), &report.csv())?;

    let means: serde_json::Map<String, serde_json::Value> = lambdas
        .iter()
        .map(|&l| {
            let mean = report.mean_mahalanobis(l).expect("swept lambda present");
            (format!("{l}"), json!(mean))
        })
        .collect();
    write_report(
        ctx,
        "sweep",
        json!({
            "rows": report.rows.len(),
            "eval_samples": eval_samples,
            "mean_mahalanobis2": means,
        }),
        start.elapsed().as_secs_f64(),
        "sweep-report.json",
    )?;
    Ok(())
}
