mod convexity;
mod distance;
mod geodesic;
mod hopflax;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hk_core::HkError;

use crate::manifest::RunManifest;

/// Hellinger-Kantorovich distances, geodesics, Hopf-Lax flows and convexity
/// certificates from JSON input files.
#[derive(Debug, Parser)]
#[command(name = "hk", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct Common {
    /// Numerical tolerance; each command documents its default.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Seed for randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 runs fully serially.
    #[arg(long, global = true, env = "HK_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "hk-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// HK distance between two measure files.
    Distance(distance::DistanceArgs),
    /// Snapshots of the geodesic between two measure files.
    Geodesic(geodesic::GeodesicArgs),
    /// Forward or backward Hopf-Lax flow of a grid potential.
    Hopflax(hopflax::HopflaxArgs),
    /// Geodesic λ-convexity certificate of an integral functional.
    Convexity(convexity::ConvexityArgs),
}

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_CERTIFICATION_FAIL: u8 = 4;

/// What a finished command hands back to `main`.
pub struct Outcome {
    pub code: u8,
    pub manifest: RunManifest,
}

/// Marks an error as caused by invalid input rather than numerics.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some()
        || err.downcast_ref::<std::io::Error>().is_some()
        || err.downcast_ref::<serde_json::Error>().is_some()
    {
        return EXIT_INPUT;
    }
    match err.downcast_ref::<HkError>() {
        Some(
            HkError::DimensionMismatch { .. }
            | HkError::InvalidMeasure(_)
            | HkError::InvalidGrid(_)
            | HkError::NonpositiveParameter { .. }
            | HkError::IndexOutOfRange(_)
            | HkError::TooLarge(_)
            | HkError::DomainError(_)
            | HkError::UndefinedWeight(_)
            | HkError::NotAPartition(_)
            | HkError::OutsideDomain { .. }
            | HkError::EmptyGrid,
        ) => EXIT_INPUT,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let (name, result) = match &cli.command {
        Command::Distance(a) => ("distance", distance::run(a, &cli.common)),
        Command::Geodesic(a) => ("geodesic", geodesic::run(a, &cli.common)),
        Command::Hopflax(a) => ("hopflax", hopflax::run(a, &cli.common)),
        Command::Convexity(a) => ("convexity", convexity::run(a, &cli.common)),
    };
    let (code, mut manifest) = match result {
        Ok(o) => (o.code, o.manifest),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = exit_code_for(&e);
            let mut m = RunManifest::new(name, &cli.common, serde_json::Value::Null);
            m.error = Some(format!("{e:#}"));
            (code, m)
        }
    };
    manifest.exit_code = code;
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = manifest.write(&cli.common.out) {
        eprintln!("error: cannot write manifest: {e:#}");
        return ExitCode::from(if code == EXIT_OK { EXIT_INPUT } else { code });
    }
    ExitCode::from(code)
}
