use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hk_core::{certify_with_tolerance, lambda_opt, ConvexityReport, DensityFunction, EnergySpec, CERTIFY_TOLERANCE};
use serde::Serialize;

use crate::io::read_json;
use crate::manifest::RunManifest;
use crate::{Common, InputError, Outcome, EXIT_CERTIFICATION_FAIL, EXIT_OK};

#[derive(Debug, Args, Serialize)]
pub struct ConvexityArgs {
    /// JSON description of the density function E.
    pub spec: PathBuf,
    /// Space dimension d.
    #[arg(long = "dim", short = 'd')]
    pub dim: usize,
    /// Convexity modulus λ to certify.
    #[arg(long, default_value_t = 0.0, conflicts_with = "optimal")]
    pub lambda: f64,
    /// Compute the optimal λ instead of certifying a given one.
    #[arg(long)]
    pub optimal: bool,
}

#[derive(Debug, Serialize)]
pub struct ConvexityOutput {
    pub version: u32,
    pub spec: EnergySpec,
    pub verdict: &'static str,
    pub failing_condition: Option<&'static str>,
    /// Optimal modulus and its minimizer, with `--optimal`.
    pub lambda_opt: Option<f64>,
    pub argmin_c: Option<f64>,
    pub report: ConvexityReport,
}

pub fn run(args: &ConvexityArgs, common: &Common) -> Result<Outcome> {
    let mut manifest = RunManifest::new("convexity", common, serde_json::to_value(args)?);
    if args.dim == 0 {
        return Err(InputError("dimension must be at least 1".into()).into());
    }
    let spec: EnergySpec = read_json(&args.spec, &mut manifest)?;
    let e = DensityFunction::from_spec(&spec)?;
    let tol = common.tolerance.unwrap_or(CERTIFY_TOLERANCE);
    let (lambda, optimum) = if args.optimal {
        let (l, c) = lambda_opt(&e, args.dim, None)?;
        (l, Some((l, c)))
    } else {
        (args.lambda, None)
    };
    let report = certify_with_tolerance(&e, args.dim, lambda, None, tol)?;
    let out = ConvexityOutput {
        version: 1,
        spec,
        verdict: if report.overall { "PASS" } else { "FAIL" },
        failing_condition: report.failing_condition(),
        lambda_opt: optimum.map(|o| o.0),
        argmin_c: optimum.map(|o| o.1),
        report,
    };
    manifest.output(&common.out, "report.json", &out)?;
    manifest.summary = serde_json::json!({
        "verdict": out.verdict,
        "lambda": lambda,
        "failing_condition": out.failing_condition,
        "lambda_opt": out.lambda_opt,
        "argmin_c": out.argmin_c,
    });
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    let code = if out.report.overall {
        EXIT_OK
    } else {
        EXIT_CERTIFICATION_FAIL
    };
    Ok(Outcome { code, manifest })
}
