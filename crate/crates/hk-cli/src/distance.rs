use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hk_core::measures::rescale_to_canonical;
use hk_core::{solve_let, OptimalityCertificate, SolverOptions, TransportPlan};
use serde::Serialize;

use crate::io::read_measure;
use crate::manifest::RunManifest;
use crate::{Common, Outcome, EXIT_OK};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Args, Serialize)]
pub struct DistanceArgs {
    pub mu0: PathBuf,
    pub mu1: PathBuf,
    /// Transport scale of `HK_{α,β}`.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Reaction scale of `HK_{α,β}`.
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
}

#[derive(Debug, Serialize)]
pub struct DistanceResult {
    pub version: u32,
    pub hk: f64,
    pub hk_squared: f64,
    pub alpha: f64,
    pub beta: f64,
    pub polish_sweeps: usize,
    pub certificate: OptimalityCertificate,
}

#[derive(Serialize)]
struct PlanOutput<'a> {
    version: u32,
    /// Plan between the canonically rescaled measures; indices refer to the
    /// atoms of the input files.
    plan: &'a TransportPlan,
}

pub fn run(args: &DistanceArgs, common: &Common) -> Result<Outcome> {
    let mut manifest = RunManifest::new("distance", common, serde_json::to_value(args)?);
    let mu0 = read_measure(&args.mu0, &mut manifest)?;
    let mu1 = read_measure(&args.mu1, &mut manifest)?;
    let opts = SolverOptions {
        seed: common.seed,
        ..SolverOptions::with_tolerance(common.tolerance.unwrap_or(DEFAULT_TOLERANCE))
    };
    let (c0, factor) = rescale_to_canonical(args.alpha, args.beta, &mu0)?;
    let (c1, _) = rescale_to_canonical(args.alpha, args.beta, &mu1)?;
    let sol = solve_let(&c0, &c1, &opts)?;
    let hk_squared = (factor * sol.hk_squared).max(0.0);
    let result = DistanceResult {
        version: 1,
        hk: hk_squared.sqrt(),
        hk_squared,
        alpha: args.alpha,
        beta: args.beta,
        polish_sweeps: sol.polish_sweeps,
        certificate: sol.certificate,
    };
    manifest.output(&common.out, "result.json", &result)?;
    manifest.output(
        &common.out,
        "plan.json",
        &PlanOutput {
            version: 1,
            plan: &sol.plan,
        },
    )?;
    manifest.output(&common.out, "certificate.json", &sol.certificate)?;
    manifest.summary = serde_json::json!({ "hk": result.hk, "hk_squared": result.hk_squared });
    let mut text = serde_json::to_string_pretty(&result)?;
    text.push('\n');
    print!("{text}");
    Ok(Outcome {
        code: EXIT_OK,
        manifest,
    })
}
