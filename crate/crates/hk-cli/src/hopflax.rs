use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use hk_core::{contact_set, contact_tolerance, hopf_lax_backward, hopf_lax_forward, transport_map, GridFunction};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{grid_file, read_grid};
use crate::manifest::RunManifest;
use crate::{Common, InputError, Outcome, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `ξ_t = P_t ξ₀`
    Forward,
    /// `ξ̄_t = R_{1-t} ξ̄₁`
    Backward,
}

#[derive(Debug, Args, Serialize)]
pub struct HopflaxArgs {
    /// Grid file: ξ₀ for forward runs and pairs, ξ̄₁ for backward runs.
    pub grid: PathBuf,
    #[arg(long, value_enum, default_value = "forward")]
    pub direction: Direction,
    /// Comma-separated times in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    pub times: Vec<f64>,
    /// Grid file with ξ̄₁; emits both flows, contact sets and maps.
    #[arg(long)]
    pub pair: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ContactNode {
    pub node: usize,
    pub x: Vec<f64>,
    /// `Ξ⁻`: the mass at this node vanishes at time 1.
    pub minus: bool,
    /// `Ξ⁺`: the mass at this node is created after time 0.
    pub plus: bool,
    /// `(T_{t->0}(x), q_{t->0}(x))`, absent where undefined.
    pub to_start: Option<(Vec<f64>, f64)>,
    /// `(T_{t->1}(x), q_{t->1}(x))`, absent where undefined.
    pub to_end: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Serialize)]
pub struct ContactOutput {
    pub version: u32,
    pub t: f64,
    pub tolerance: f64,
    pub nodes: Vec<ContactNode>,
}

fn flow(xi: &GridFunction, direction: Direction, t: f64) -> Result<GridFunction> {
    Ok(match direction {
        Direction::Forward if t == 0.0 => xi.clone(),
        Direction::Forward => hopf_lax_forward(xi, t)?,
        Direction::Backward if t == 1.0 => xi.clone(),
        Direction::Backward => hopf_lax_backward(xi, t)?,
    })
}

pub fn run(args: &HopflaxArgs, common: &Common) -> Result<Outcome> {
    let mut manifest = RunManifest::new("hopflax", common, serde_json::to_value(args)?);
    if args.times.is_empty() || args.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(InputError(format!(
            "times must be non-empty and lie in [0, 1], got {:?}",
            args.times
        ))
        .into());
    }
    let base = read_grid(&args.grid, &mut manifest)?;
    let Some(pair) = &args.pair else {
        let snaps: Vec<GridFunction> = args
            .times
            .iter()
            .map(|t| flow(&base, args.direction, *t))
            .collect::<Result<_>>()?;
        let prefix = match args.direction {
            Direction::Forward => "xi",
            Direction::Backward => "xibar",
        };
        for (k, g) in snaps.iter().enumerate() {
            manifest.output(&common.out, &format!("{prefix}_{k:03}.json"), &grid_file(g))?;
        }
        manifest.summary = serde_json::json!({ "times": args.times, "snapshots": snaps.len() });
        println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
        return Ok(Outcome {
            code: EXIT_OK,
            manifest,
        });
    };
    let xibar1 = read_grid(pair, &mut manifest)?;
    if xibar1.grid != base.grid {
        return Err(InputError("ξ₀ and ξ̄₁ must share one grid".into()).into());
    }
    if args.times.iter().any(|t| *t <= 0.0 || *t >= 1.0) {
        return Err(InputError("pair mode needs times strictly inside (0, 1)".into()).into());
    }
    let mut sizes = Vec::with_capacity(args.times.len());
    for (k, t) in args.times.iter().enumerate() {
        let xi_t = flow(&base, Direction::Forward, *t)?;
        let xibar_t = flow(&xibar1, Direction::Backward, *t)?;
        let tol = common
            .tolerance
            .unwrap_or_else(|| contact_tolerance(base.grid.spacing(), base.min_value(), xibar1.max_value(), *t));
        let cs = contact_set(&xi_t, &xibar_t, *t, tol)?;
        let nodes: Vec<ContactNode> = cs
            .nodes()
            .into_par_iter()
            .map(|i| {
                let x = base.grid.node(i);
                ContactNode {
                    node: i,
                    minus: cs.minus[i],
                    plus: cs.plus[i],
                    to_start: transport_map(&xibar_t, *t, 0.0, &x).ok(),
                    to_end: transport_map(&xi_t, *t, 1.0, &x).ok(),
                    x,
                }
            })
            .collect();
        sizes.push(nodes.len());
        manifest.output(&common.out, &format!("xi_{k:03}.json"), &grid_file(&xi_t))?;
        manifest.output(&common.out, &format!("xibar_{k:03}.json"), &grid_file(&xibar_t))?;
        let out = ContactOutput {
            version: 1,
            t: *t,
            tolerance: tol,
            nodes,
        };
        manifest.output(&common.out, &format!("contact_{k:03}.json"), &out)?;
    }
    manifest.summary = serde_json::json!({ "times": args.times, "contact_sizes": sizes });
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(Outcome {
        code: EXIT_OK,
        manifest,
    })
}
