//! Theory-check manifest and coverage-table commands.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use recomb_core::numerics::Matrix;
use recomb_core::recombine::MaskPolicy;
use recomb_core::rng::{split_seed, stream};
use recomb_core::theory::{
    closure_complete, coverage_sim, expected_coverage, inverted_u_demo, mask_alpha, mi_contraction,
    poe_check, random_joint, BinDistribution, BlockCode, DiscreteJoint, EnergySet, InvertedUFamily,
    COVERAGE_CSV_HEADER,
};
use recomb_core::{Error, Result};
use serde_json::{json, Value};

use crate::report::{ensure_out_dir, write_report, write_text};
use crate::Ctx;

pub const THEORY_KEYS: &[(&str, &str)] = &[
    ("theory.joints", "1000"),
    ("theory.alpha-steps", "11"),
    ("theory.closure-instances", "200"),
    ("theory.poe-sets", "50"),
    ("theory.coverage-pairs", "20"),
    ("theory.trials", "10000"),
    ("theory.fixture", "default"),
];

pub const COVERAGE_KEYS: &[(&str, &str)] = &[
    ("coverage.bins", "12"),
    ("coverage.n", "20"),
    ("coverage.grid-points", "9"),
    ("coverage.failure-lo", "0.9"),
    ("coverage.failure-hi", "0.05"),
    ("coverage.concentration-lo", "0"),
    ("coverage.concentration-hi", "5"),
    ("coverage.trials", "2000"),
];

struct Check {
    name: &'static str,
    pass: bool,
    measured: Value,
}

fn mi_check(ctx: &Ctx) -> Result<Check> {
    let joints = ctx.config.get_usize("theory.joints")?;
    let alpha_steps = ctx.config.get_usize("theory.alpha-steps")?;
    if alpha_steps < 2 {
        return Err(Error::InvalidConfig("theory.alpha-steps must be at least 2".into()));
    }
    let mut rng = stream(split_seed(ctx.seed, "theory-mi"));
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_alpha1_gap: f64 = 0.0;
    for _ in 0..joints {
        let rows = rng.random_range(2..=5);
        let cols = rng.random_range(2..=5);
        let joint = random_joint(&mut rng, rows, cols)?;
        for step in 0..alpha_steps {
            let alpha = step as f64 / (alpha_steps - 1) as f64;
            let (lhs, bound) = mi_contraction(&joint, alpha)?;
            max_violation = max_violation.max(lhs - bound);
            if step + 1 == alpha_steps {
                max_alpha1_gap = max_alpha1_gap.max((lhs - bound).abs());
            }
        }
    }
    Ok(Check {
        name: "mi-contraction",
        pass: max_violation <= 1e-12 && max_alpha1_gap <= 1e-12,
        measured: json!({
            "joints": joints,
            "alpha_steps": alpha_steps,
            "max_violation": max_violation,
            "max_alpha1_gap": max_alpha1_gap,
        }),
    })
}

fn brute_force_product(codes: &[BlockCode]) -> BTreeSet<BlockCode> {
    let mut projections: [BTreeSet<u32>; 3] = Default::default();
    for c in codes {
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
    product
}

fn closure_check(ctx: &Ctx) -> Result<Check> {
    let instances = ctx.config.get_usize("theory.closure-instances")?;
    let mut rng = stream(split_seed(ctx.seed, "theory-closure"));
    let mut mismatches = 0usize;
    for _ in 0..instances {
        let count = rng.random_range(1..=5);
        let codes: Vec<BlockCode> = (0..count)
            .map(|_| (0..3).map(|_| rng.random_range(0..3u32)).collect())
            .collect();
        if closure_complete(&codes)? != brute_force_product(&codes) {
            mismatches += 1;
        }
    }
    Ok(Check {
        name: "closure-completion",
        pass: mismatches == 0,
        measured: json!({ "instances": instances, "mismatches": mismatches }),
    })
}

fn poe_check_suite(ctx: &Ctx) -> Result<Check> {
    let sets = ctx.config.get_usize("theory.poe-sets")?;
    let mut rng = stream(split_seed(ctx.seed, "theory-poe"));
    let mut max_discrepancy: f64 = 0.0;
    for _ in 0..sets {
        let grid: Vec<f64> = (0..4001).map(|i| -6.0 + i as f64 * 0.003).collect();
        let energies: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let center: f64 = rng.random_range(-1.5..1.5);
                let curvature: f64 = rng.random_range(0.3..1.2);
                let ripple: f64 = rng.random_range(0.0..0.5);
                let freq: f64 = rng.random_range(0.5..2.0);
                grid.iter()
                    .map(|x| curvature * (x - center).powi(2) + ripple * (freq * x).cos())
                    .collect()
            })
            .collect();
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..2.0)).collect();
        let es = EnergySet::new(grid, energies, weights)?;
        max_discrepancy = max_discrepancy.max(poe_check(&es)?);
    }
    Ok(Check {
        name: "poe-factorization",
        pass: max_discrepancy < 1e-9,
        measured: json!({ "sets": sets, "max_discrepancy": max_discrepancy }),
    })
}

fn coverage_check(ctx: &Ctx) -> Result<Check> {
    let pairs = ctx.config.get_usize("theory.coverage-pairs")?;
    let trials = ctx.config.get_usize("theory.trials")?;
    let mut rng = stream(split_seed(ctx.seed, "theory-coverage"));
    let mut max_se_ratio: f64 = 0.0;
    for i in 0..pairs {
        let bins = rng.random_range(3..=12);
        let mut raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>() + 0.02).collect();
        let total: f64 = raw.iter().sum();
        for v in &mut raw {
            *v /= total;
        }
        let drift = 1.0 - raw.iter().sum::<f64>();
        raw[0] += drift;
        let q = BinDistribution::new(raw)?;
        let n = rng.random_range(2..=30);
        let expect = expected_coverage(&q, n)?;
        let sim = coverage_sim(&q, n, trials, split_seed(ctx.seed, &format!("theory-cov-{i}")))?;
        // Independent-Bernoulli variance bound; visit indicators are
        // negatively correlated.
        let var_bound: f64 = q
            .probabilities()
            .iter()
            .map(|&p| {
                let hit = 1.0 - (1.0 - p).powi(n as i32);
                hit * (1.0 - hit)
            })
            .sum();
        let se = (var_bound / trials as f64).sqrt().max(1e-12);
        max_se_ratio = max_se_ratio.max((sim - expect).abs() / se);
    }
    let q = BinDistribution::new(vec![0.3, 0.45, 0.25])?;
    let n1_exact = expected_coverage(&q, 1)? == 1.0
        && coverage_sim(&q, 1, 200, split_seed(ctx.seed, "theory-cov-n1"))? == 1.0;
    Ok(Check {
        name: "coverage-formula",
        pass: max_se_ratio <= 3.0 && n1_exact,
        measured: json!({
            "pairs": pairs,
            "trials": trials,
            "max_se_ratio": max_se_ratio,
            "n1_exact": n1_exact,
        }),
    })
}

fn mask_alpha_check() -> Result<Check> {
    let iid = mask_alpha(MaskPolicy::IidHalf, 3, 0, 2)?;
    let proper_k2 = mask_alpha(MaskPolicy::Proper, 2, 0, 1)?;
    let proper_k3 = mask_alpha(MaskPolicy::Proper, 3, 0, 1)?;
    let pass = iid == 0.5 && proper_k2 == 0.0 && proper_k3 == 1.0 / 3.0;
    Ok(Check {
        name: "mask-alpha",
        pass,
        measured: json!({ "iid_half": iid, "proper_k2": proper_k2, "proper_k3": proper_k3 }),
    })
}

fn inverted_u_check() -> Result<Check> {
    let grid: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
    let table = inverted_u_demo(&InvertedUFamily::default(), &grid, 20)?;
    Ok(Check {
        name: "inverted-u",
        pass: !table.constant,
        measured: json!({
            "argmax_lambda": table.rows[table.argmax_index].lambda,
            "peak_coverage": table.rows[table.argmax_index].coverage,
            "constant": table.constant,
        }),
    })
}

/// Runs every theory check and writes the manifest; `Ok(false)` means at
/// least one check failed.
pub fn cmd_theory(ctx: &Ctx) -> Result<bool> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    match ctx.config.get_string("theory.fixture")?.as_str() {
        "default" => {}
        "unnormalized-pmf" => {
            // Deliberately broken input: the constructor must reject it.
            DiscreteJoint::new(Matrix::new(2, 2, vec![0.5; 4])?)?;
            unreachable!("unnormalized pmf accepted");
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "theory.fixture {other:?} is not one of default, unnormalized-pmf"
            )))
        }
    }

    let checks = vec![
        mi_check(ctx)?,
        closure_check(ctx)?,
        poe_check_suite(ctx)?,
        coverage_check(ctx)?,
        mask_alpha_check()?,
        inverted_u_check()?,
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    let entries: Vec<Value> = checks
        .iter()
        .map(|c| json!({ "name": c.name, "pass": c.pass, "measured": c.measured }))
        .collect();
    write_report(
        ctx,
        "theory",
        json!({ "checks": entries, "all_pass": all_pass }),
        start.elapsed().as_secs_f64(),
        "theory-manifest.json",
    )?;
    Ok(all_pass)
}

pub fn cmd_coverage(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&ctx.out)?;
    let family = InvertedUFamily {
        bins: ctx.config.get_usize("coverage.bins")?,
        failure_mass_lo_lambda: ctx.config.get_f64("coverage.failure-lo")?,
        failure_mass_hi_lambda: ctx.config.get_f64("coverage.failure-hi")?,
        concentration_lo_lambda: ctx.config.get_f64("coverage.concentration-lo")?,
        concentration_hi_lambda: ctx.config.get_f64("coverage.concentration-hi")?,
    };
    let points = ctx.config.get_usize("coverage.grid-points")?;
    if points < 3 {
        return Err(Error::InvalidConfig("coverage.grid-points must be at least 3".into()));
    }
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let n = ctx.config.get_usize("coverage.n")?;
    let trials = ctx.config.get_usize("coverage.trials")?;
    let table = inverted_u_demo(&family, &grid, n)?;

    let csv = if trials == 0 {
        table.csv()
    } else {
        let mut out = format!("{COVERAGE_CSV_HEADER},simulated_coverage\n");
        for (i, row) in table.rows.iter().enumerate() {
            let sim = coverage_sim(
                &family.at(row.lambda)?,
                n,
                trials,
                split_seed(ctx.seed, &format!("coverage-sim-{i}")),
            )?;
            out.push_str(&format!("{},{},{}\n", row.lambda, row.coverage, sim));
        }
        out
    };
    write_text(&ctx.out.join("coverage.csv"), &csv)?;

    write_report(
        ctx,
        "coverage",
        json!({
            "argmax_lambda": table.rows[table.argmax_index].lambda,
            "peak_coverage": table.rows[table.argmax_index].coverage,
            "constant": table.constant,
            "rollouts": n,
        }),
        start.elapsed().as_secs_f64(),
        "coverage-report.json",
    )?;
    Ok(())
}
