//! Dataset generation, adversarial reparameterization training, and metric
//! evaluation commands.

use std::io::BufReader;
use std::time::Instant;

use recomb_core::checkpoint::{load_synth, store_synth, Checkpoint};
use recomb_core::metrics::MetricsConfig;
use recomb_core::numerics::Matrix;
use recomb_core::recombine::Reparam;
use recomb_core::rng::split_seed;
use recomb_core::synthdata::{make_dataset, Dataset, GroundTruthSpec};
use recomb_core::synthtrain::{evaluate_reparam, train_synthetic, SynthTrainConfig, TrainSeeds};
use recomb_core::{Error, Result};
use serde_json::json;

use crate::report::{ensure_out_dir, write_report, write_text};
use crate::Ctx;

pub const GEN_DATA_KEYS: &[(&str, &str)] = &[
    ("data.n", "10000"),
    ("data.ring-radius", "1"),
    ("data.ring-noise", "0.1"),
    ("data.square-half-width", "1"),
    ("data.bimodal-mean-x", "1.5"),
    ("data.bimodal-mean-y", "0"),
    ("data.bimodal-std", "0.3"),
    ("data.mixing-seed", "39"),
];

pub const TRAIN_SYNTH_KEYS: &[(&str, &str)] = &[
    ("paths.dataset", "dataset.csv"),
    ("paths.spec", "dataset.json"),
    ("train.learning-rate", "0.001"),
    ("train.batch-size", "256"),
    ("train.iterations", "5000"),
    ("train.ortho-weight", "0.01"),
    ("train.mask-policy", "iid-half"),
    ("train.eval-pairs", "10000"),
    ("train.heldout-every", "250"),
    ("train.heldout-pairs", "512"),
    ("metrics.bins", "20"),
    ("metrics.n-eval", "4000"),
];

pub const EVAL_KEYS: &[(&str, &str)] = &[
    ("paths.dataset", "dataset.csv"),
    ("paths.spec", "dataset.json"),
    ("paths.checkpoint", ""),
    ("eval.pairs", "10000"),
    ("metrics.bins", "20"),
    ("metrics.n-eval", "4000"),
];

pub fn spec_from_config(ctx: &Ctx) -> Result<GroundTruthSpec> {
    let mx = ctx.config.get_f64("data.bimodal-mean-x")?;
    let my = ctx.config.get_f64("data.bimodal-mean-y")?;
    GroundTruthSpec::new(
        ctx.config.get_f64("data.ring-radius")?,
        ctx.config.get_f64("data.ring-noise")?,
        ctx.config.get_f64("data.square-half-width")?,
        [[mx, my], [-mx, -my]],
        ctx.config.get_f64("data.bimodal-std")?,
        ctx.config.get_u64("data.mixing-seed")?,
    )
}

/// Reads the CSV + JSON pair written by `gen-data`.
pub fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    let spec_path = ctx.config.get_path("paths.spec", &ctx.out)?;
    let csv_path = ctx.config.get_path("paths.dataset", &ctx.out)?;
    let spec_text = std::fs::read_to_string(&spec_path)
        .map_err(|e| Error::Io(format!("reading {}: {e}", spec_path.display())))?;
    let spec: GroundTruthSpec = serde_json::from_str(&spec_text)
        .map_err(|e| Error::Format(format!("{}: {e}", spec_path.display())))?;
    let file = std::fs::File::open(&csv_path)
        .map_err(|e| Error::Io(format!("reading {}: {e}", csv_path.display())))?;
    Dataset::read_csv(&mut BufReader::new(file), spec)
}

pub fn metrics_from_config(ctx: &Ctx) -> Result<MetricsConfig> {
    Ok(MetricsConfig {
        bins: ctx.config.get_usize("metrics.bins")?,
        n_eval: ctx.config.get_usize("metrics.n-eval")?,
        blocks: vec![2, 2, 2],
        seed: split_seed(ctx.seed, "metrics"),
    })
}

pub fn cmd_gen_data(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    let n = ctx.config.get_usize("data.n")?;
    let spec = spec_from_config(ctx)?;
    let data = make_dataset(split_seed(ctx.seed, "data"), n, &spec)?;

    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let csv_path = ctx.out.join("dataset.csv");
    write_text(&csv_path, std::str::from_utf8(&csv).expect("ascii rows"))?;
    let spec_path = ctx.out.join("dataset.json");
    write_text(&spec_path, &data.spec_json()?)?;

    write_report(
        ctx,
        "gen-data",
        json!({
            "rows": data.len(),
            "dataset": csv_path.display().to_string(),
            "spec": spec_path.display().to_string(),
        }),
        start.elapsed().as_secs_f64(),
        "gen-data-report.json",
    )?;
    Ok(())
}

fn train_config_from(ctx: &Ctx) -> Result<SynthTrainConfig> {
    let mut config = SynthTrainConfig::with_seeds(TrainSeeds {
        init: split_seed(ctx.seed, "init"),
        masks: split_seed(ctx.seed, "masks"),
        batches: split_seed(ctx.seed, "batches"),
    });
    config.learning_rate = ctx.config.get_f64("train.learning-rate")?;
    config.batch_size = ctx.config.get_usize("train.batch-size")?;
    config.iterations = ctx.config.get_usize("train.iterations")?;
    config.ortho_weight = ctx.config.get_f64("train.ortho-weight")?;
    config.mask_policy = ctx.config.get_policy("train.mask-policy")?;
    config.eval_pairs = ctx.config.get_usize("train.eval-pairs")?;
    config.heldout_every = ctx.config.get_usize("train.heldout-every")?;
    config.heldout_pairs = ctx.config.get_usize("train.heldout-pairs")?;
    config.metrics = metrics_from_config(ctx)?;
    Ok(config)
}

pub fn cmd_train_synth(ctx: &Ctx) -> Result<()> {
    ensure_out_dir(&ctx.out)?;
    let data = load_dataset(ctx)?;
    let config = train_config_from(ctx)?;
    let (rep, disc, report) = train_synthetic(&config, &data)?;

    let mut ck = store_synth(&rep, &disc)?;
    ck.set_meta("global-seed", &ctx.seed.to_string());
    ck.save(ctx.out.join("synth.rcmb"))?;

    let mut curves = String::from("iteration,disc_loss,w_loss,ortho_penalty\n");
    for i in 0..report.disc_losses.len() {
        curves.push_str(&format!(
            "{},{},{},{}\n",
            i, report.disc_losses[i], report.w_losses[i], report.ortho_penalties[i]
        ));
    }
    write_text(&ctx.out.join("train-synth-curves.csv"), &curves)?;

    write_report(
        ctx,
        "train-synth",
        json!({
            "initial_metrics": report.initial_metrics,
            "final_metrics": report.final_metrics,
            "heldout": report.heldout,
            "seeds": report.seeds,
            "iterations": config.iterations,
        }),
        report.wall_clock_secs,
        "train-synth-report.json",
    )?;
    Ok(())
}

fn metrics_csv_row(which: &str, m: &recomb_core::metrics::MetricsReport) -> String {
    format!(
        "{which},{},{},{},{},{},{}\n",
        m.mahalanobis2_mean, m.mcc, m.mig, m.block_corr, m.tc, m.frechet
    )
}

pub fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    let data = load_dataset(ctx)?;
    let metrics = metrics_from_config(ctx)?;
    let pairs = ctx.config.get_usize("eval.pairs")?;
    let pair_seed = split_seed(ctx.seed, "eval-pairs");

    let naive = evaluate_reparam(
        &data,
        &Reparam::new(Matrix::identity(6))?,
        pairs,
        pair_seed,
        &metrics,
    )?;
    let mut csv = String::from("which,mahalanobis2,mcc,mig,block_corr,tc,frechet\n");
    csv.push_str(&metrics_csv_row("naive", &naive));

    let reparam = match ctx.config.get_optional_path("paths.checkpoint", &ctx.out)? {
        Some(path) => {
            let (rep, _disc) = load_synth(&Checkpoint::load(&path)?)?;
            let report = evaluate_reparam(&data, &rep, pairs, pair_seed, &metrics)?;
            csv.push_str(&metrics_csv_row("reparam", &report));
            Some(report)
        }
        None => None,
    };
    write_text(&ctx.out.join("eval-row.csv"), &csv)?;

    write_report(
        ctx,
        "eval",
        json!({
            "naive": naive,
            "reparam": reparam,
            "pairs": pairs,
        }),
        start.elapsed().as_secs_f64(),
        "eval-report.json",
    )?;
    Ok(())
}
