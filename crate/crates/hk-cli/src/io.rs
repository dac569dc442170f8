use std::path::Path;

use anyhow::{Context, Result};
use hk_core::measures::{GridFile, MeasureFile};
use hk_core::{Atom, DiscreteMeasure, GridFunction};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::InputError;

pub fn read_json<T: DeserializeOwned>(path: &Path, manifest: &mut RunManifest) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    manifest.add_input(path, &bytes);
    serde_json::from_slice(&bytes).map_err(|e| InputError(format!("parsing {}: {e}", path.display())).into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_measure(path: &Path, manifest: &mut RunManifest) -> Result<DiscreteMeasure> {
    let file: MeasureFile = read_json(path, manifest)?;
    DiscreteMeasure::try_from(file).with_context(|| format!("invalid measure in {}", path.display()))
}

pub fn read_grid(path: &Path, manifest: &mut RunManifest) -> Result<GridFunction> {
    let file: GridFile = read_json(path, manifest)?;
    let (grid, values) = file
        .into_parts()
        .with_context(|| format!("invalid grid in {}", path.display()))?;
    Ok(GridFunction::new(grid, values)?)
}

/// Merges coincident atoms, drops zero masses and sorts atoms by position.
pub fn normalized(mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let mut atoms: Vec<Atom> = mu.merged().atoms().iter().filter(|a| a.mass > 0.0).cloned().collect();
    atoms.sort_by(|a, b| {
        a.x.iter()
            .zip(&b.x)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(DiscreteMeasure::new(mu.dim(), atoms)?)
}

pub fn measure_file(mu: &DiscreteMeasure) -> MeasureFile {
    MeasureFile::from(mu)
}

pub fn grid_file(g: &GridFunction) -> GridFile {
    GridFile::from_parts(&g.grid, &g.values)
}
