use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hk_core::geodesics::sample_many;
use hk_core::{build_geodesic, solve_let, DiscreteMeasure, SolverOptions};
use serde::Serialize;

use crate::io::{measure_file, normalized, read_measure};
use crate::manifest::RunManifest;
use crate::{Common, InputError, Outcome, EXIT_NUMERICAL, EXIT_OK};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Relative slack of the constant-speed check.
pub const SPEED_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Args, Serialize)]
pub struct GeodesicArgs {
    pub mu0: PathBuf,
    pub mu1: PathBuf,
    /// Comma-separated sample times in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub times: Vec<f64>,
    /// Re-solve HK between snapshots and compare with |t - s| HK(μ0, μ1).
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Serialize)]
pub struct MassTable {
    pub version: u32,
    pub hk_squared: f64,
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    /// `(1-t) M(μ0) + t M(μ1) - t(1-t) HK²` at each time.
    pub quadratic: Vec<f64>,
    pub max_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct SpeedCheck {
    pub s: f64,
    pub t: f64,
    pub hk: f64,
    pub expected: f64,
    pub deviation: f64,
}

#[derive(Debug, Serialize)]
pub struct SpeedReport {
    pub version: u32,
    pub hk: f64,
    pub checks: Vec<SpeedCheck>,
    pub max_deviation: f64,
    pub constant_speed: bool,
}

pub fn run(args: &GeodesicArgs, common: &Common) -> Result<Outcome> {
    let mut manifest = RunManifest::new("geodesic", common, serde_json::to_value(args)?);
    if args.times.is_empty() || args.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(InputError(format!(
            "times must be non-empty and lie in [0, 1], got {:?}",
            args.times
        ))
        .into());
    }
    let mu0 = read_measure(&args.mu0, &mut manifest)?;
    let mu1 = read_measure(&args.mu1, &mut manifest)?;
    let opts = SolverOptions {
        seed: common.seed,
        ..SolverOptions::with_tolerance(common.tolerance.unwrap_or(DEFAULT_TOLERANCE))
    };
    let curve = build_geodesic(&mu0, &mu1, &opts)?;
    let inner = sample_many(&curve, &args.times)?;
    // the curve passes through its endpoints exactly
    let snapshots: Vec<DiscreteMeasure> = args
        .times
        .iter()
        .zip(inner)
        .map(|(t, mu)| match *t {
            0.0 => normalized(&mu0),
            1.0 => normalized(&mu1),
            _ => normalized(&mu),
        })
        .collect::<Result<_>>()?;
    for (k, mu) in snapshots.iter().enumerate() {
        manifest.output(&common.out, &format!("snapshot_{k:03}.json"), &measure_file(mu))?;
    }
    let (m0, m1) = (mu0.total_mass(), mu1.total_mass());
    let masses: Vec<f64> = snapshots.iter().map(|m| m.total_mass()).collect();
    let quadratic: Vec<f64> = args
        .times
        .iter()
        .map(|t| (1.0 - t) * m0 + t * m1 - t * (1.0 - t) * curve.hk_squared)
        .collect();
    let max_residual = masses
        .iter()
        .zip(&quadratic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let table = MassTable {
        version: 1,
        hk_squared: curve.hk_squared,
        times: args.times.clone(),
        masses: masses.clone(),
        quadratic,
        max_residual,
    };
    manifest.output(&common.out, "masses.json", &table)?;
    manifest.summary = serde_json::json!({
        "hk_squared": curve.hk_squared,
        "times": args.times,
        "masses": masses,
        "mass_residual": max_residual,
    });
    let mut code = EXIT_OK;
    if args.verify {
        let report = verify_speed(&args.times, &snapshots, curve.hk_squared.max(0.0).sqrt(), &opts)?;
        if !report.constant_speed {
            code = EXIT_NUMERICAL;
        }
        manifest.summary["constant_speed"] = serde_json::json!(report.constant_speed);
        manifest.summary["speed_deviation"] = serde_json::json!(report.max_deviation);
        manifest.output(&common.out, "verify.json", &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(Outcome { code, manifest })
}

/// Compares `HK(μ_s, μ_t)` with `|t - s| HK` for consecutive snapshots and
/// for the first and last one.
fn verify_speed(times: &[f64], snaps: &[DiscreteMeasure], hk: f64, opts: &SolverOptions) -> Result<SpeedReport> {
    let mut pairs: Vec<(usize, usize)> = (1..times.len()).map(|k| (k - 1, k)).collect();
    if times.len() > 2 {
        pairs.push((0, times.len() - 1));
    }
    let mut checks = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let d = solve_let(&snaps[i], &snaps[j], opts)?.hk_squared.max(0.0).sqrt();
        let expected = (times[j] - times[i]).abs() * hk;
        checks.push(SpeedCheck {
            s: times[i],
            t: times[j],
            hk: d,
            expected,
            deviation: (d - expected).abs(),
        });
    }
    let max_deviation = checks.iter().map(|c| c.deviation).fold(0.0, f64::max);
    Ok(SpeedReport {
        version: 1,
        hk,
        constant_speed: max_deviation <= SPEED_TOLERANCE * hk.max(1.0),
        checks,
        max_deviation,
    })
}
