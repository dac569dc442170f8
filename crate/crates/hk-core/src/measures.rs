//! Finite measures, regular grids, support decomposition at the pi/2
//! threshold and parameter rescaling.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::cone_geometry::dist;
use crate::error::{HkError, Result};

/// Version tag written into every measure and grid file.
pub const FILE_FORMAT_VERSION: u32 = 1;

/// Default total-variation threshold used by [`DiscreteMeasure::approx_eq`].
pub const MEASURE_EQ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub mass: f64,
}

impl Atom {
    pub fn new(x: Vec<f64>, mass: f64) -> Self {
        Atom { x, mass }
    }
}

/// A finite nonnegative measure on R^d given by weighted atoms.
///
/// Zero-mass atoms are dropped on construction. Atoms are not merged
/// automatically; see [`DiscreteMeasure::merged`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

/// Hashable key of a coordinate vector; `-0.0` and `0.0` are identified.
pub(crate) fn coord_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 {
            return Err(HkError::InvalidMeasure("dimension must be positive".into()));
        }
        let mut kept = Vec::with_capacity(atoms.len());
        for a in atoms {
            if a.x.len() != dim {
                return Err(HkError::DimensionMismatch {
                    expected: dim,
                    found: a.x.len(),
                });
            }
            if a.x.iter().any(|v| !v.is_finite()) {
                return Err(HkError::InvalidMeasure("non-finite atom position".into()));
            }
            if !a.mass.is_finite() || a.mass < 0.0 {
                return Err(HkError::InvalidMeasure(format!(
                    "atom mass must be finite and nonnegative, got {}",
                    a.mass
                )));
            }
            if a.mass > 0.0 {
                kept.push(a);
            }
        }
        Ok(DiscreteMeasure { dim, atoms: kept })
    }

    pub fn empty(dim: usize) -> Self {
        DiscreteMeasure {
            dim: dim.max(1),
            atoms: Vec::new(),
        }
    }

    pub fn dirac(x: Vec<f64>, mass: f64) -> Result<Self> {
        let dim = x.len();
        DiscreteMeasure::new(dim, vec![Atom::new(x, mass)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Merges atoms with bit-identical coordinates, keeping first-occurrence order.
    pub fn merged(&self) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut out: Vec<Atom> = Vec::new();
        for a in &self.atoms {
            match index.get(&coord_key(&a.x)) {
                Some(&k) => out[k].mass += a.mass,
                None => {
                    index.insert(coord_key(&a.x), out.len());
                    out.push(a.clone());
                }
            }
        }
        DiscreteMeasure {
            dim: self.dim,
            atoms: out,
        }
    }

    /// Snaps positions to a lattice of the given step, then merges.
    pub fn quantized(&self, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(HkError::NonpositiveParameter {
                name: "quantization step",
                value: step,
            });
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom::new(a.x.iter().map(|v| (v / step).round() * step).collect(), a.mass))
            .collect();
        Ok(DiscreteMeasure { dim: self.dim, atoms }.merged())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        DiscreteMeasure::new(
            self.dim,
            self.atoms
                .iter()
                .map(|a| Atom::new(a.x.clone(), a.mass * factor))
                .collect(),
        )
    }

    /// Sum of two measures (atoms concatenated, then merged).
    pub fn plus(&self, other: &DiscreteMeasure) -> Result<Self> {
        check_dims(self, other)?;
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Ok(DiscreteMeasure::new(self.dim, atoms)?.merged())
    }

    /// Total-variation distance after merging both measures.
    pub fn tv_distance(&self, other: &DiscreteMeasure) -> Result<f64> {
        check_dims(self, other)?;
        let a = self.merged();
        let b = other.merged();
        let mut table: HashMap<Vec<u64>, f64> = HashMap::new();
        for at in &a.atoms {
            *table.entry(coord_key(&at.x)).or_insert(0.0) += at.mass;
        }
        for at in &b.atoms {
            *table.entry(coord_key(&at.x)).or_insert(0.0) -= at.mass;
        }
        let mut keys: Vec<_> = table.into_iter().collect();
        keys.sort_by(|p, q| p.0.cmp(&q.0));
        Ok(keys.iter().map(|(_, v)| v.abs()).sum())
    }

    pub fn approx_eq(&self, other: &DiscreteMeasure, tol: f64) -> bool {
        matches!(self.tv_distance(other), Ok(d) if d <= tol)
    }
}

pub(crate) fn check_dims(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim != b.dim {
        return Err(HkError::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

/// Indices of atoms closer than pi/2 (near) or not (far) to the other support.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDecomposition {
    pub near0: Vec<usize>,
    pub far0: Vec<usize>,
    pub near1: Vec<usize>,
    pub far1: Vec<usize>,
    pub near_mass0: f64,
    pub far_mass0: f64,
    pub near_mass1: f64,
    pub far_mass1: f64,
}

fn split_side(from: &DiscreteMeasure, to: &DiscreteMeasure) -> (Vec<usize>, Vec<usize>, f64, f64) {
    let mut near = Vec::new();
    let mut far = Vec::new();
    let (mut mn, mut mf) = (0.0, 0.0);
    for (i, a) in from.atoms().iter().enumerate() {
        // The pi/2 neighbourhood is open: distance exactly pi/2 counts as far.
        let is_near = to.atoms().iter().any(|b| dist(&a.x, &b.x) < FRAC_PI_2);
        if is_near {
            near.push(i);
            mn += a.mass;
        } else {
            far.push(i);
            mf += a.mass;
        }
    }
    (near, far, mn, mf)
}

pub fn decompose_supports(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<SupportDecomposition> {
    check_dims(mu0, mu1)?;
    let (near0, far0, near_mass0, far_mass0) = split_side(mu0, mu1);
    let (near1, far1, near_mass1, far_mass1) = split_side(mu1, mu0);
    Ok(SupportDecomposition {
        near0,
        far0,
        near1,
        far1,
        near_mass0,
        far_mass0,
        near_mass1,
        far_mass1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducedness {
    StronglyReduced,
    /// Every atom is near but some distance to the other support equals the
    /// threshold in the limit. Never produced for finite atom lists, where the
    /// minimum distance is attained.
    Reduced,
    NotReduced,
}

pub fn is_reduced(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<Reducedness> {
    let dec = decompose_supports(mu0, mu1)?;
    if dec.far0.is_empty() && dec.far1.is_empty() {
        Ok(Reducedness::StronglyReduced)
    } else {
        Ok(Reducedness::NotReduced)
    }
}

fn space_scale(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(HkError::NonpositiveParameter {
            name: "alpha",
            value: alpha,
        });
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(HkError::NonpositiveParameter {
            name: "beta",
            value: beta,
        });
    }
    Ok((4.0 * alpha / beta).sqrt())
}

/// Maps a measure for `HK_{alpha,beta}` to the canonical `HK_{1,4}` setting.
///
/// Returns the measure with positions divided by `sqrt(4 alpha / beta)` and
/// the factor `4 / beta` that multiplies canonical squared distances.
pub fn rescale_to_canonical(alpha: f64, beta: f64, mu: &DiscreteMeasure) -> Result<(DiscreteMeasure, f64)> {
    let lambda = space_scale(alpha, beta)?;
    let atoms = mu
        .atoms()
        .iter()
        .map(|a| Atom::new(a.x.iter().map(|v| v / lambda).collect(), a.mass))
        .collect();
    Ok((DiscreteMeasure::new(mu.dim(), atoms)?, 4.0 / beta))
}

/// Inverse of [`rescale_to_canonical`] on positions.
pub fn rescale_from_canonical(alpha: f64, beta: f64, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let lambda = space_scale(alpha, beta)?;
    let atoms = mu
        .atoms()
        .iter()
        .map(|a| Atom::new(a.x.iter().map(|v| v * lambda).collect(), a.mass))
        .collect();
    DiscreteMeasure::new(mu.dim(), atoms)
}

/// Regular lattice over an axis-aligned box. Nodes are stored row-major:
/// the first axis varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
}

impl GridSpec {
    pub fn new(bounds: &[(f64, f64)], spacing: &[f64]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != spacing.len() {
            return Err(HkError::InvalidGrid(
                "box and spacing must have the same positive length".into(),
            ));
        }
        let mut counts = Vec::with_capacity(bounds.len());
        for (&(lo, hi), &h) in bounds.iter().zip(spacing) {
            if !(h > 0.0) || !h.is_finite() || !lo.is_finite() || !hi.is_finite() || hi < lo {
                return Err(HkError::InvalidGrid(format!("bad axis [{lo}, {hi}] with spacing {h}")));
            }
            let cells = (hi - lo) / h;
            let n = cells.round();
            if (cells - n).abs() > 1e-6 * n.max(1.0) {
                return Err(HkError::InvalidGrid(format!(
                    "axis length {} is not a multiple of spacing {h}",
                    hi - lo
                )));
            }
            counts.push(n as usize + 1);
        }
        Ok(GridSpec {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            spacing: spacing.to_vec(),
            counts,
        })
    }

    /// One-dimensional grid with `nodes` equispaced nodes on `[lo, hi]`.
    pub fn uniform_1d(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(HkError::InvalidGrid("need at least two nodes".into()));
        }
        let h = (hi - lo) / (nodes - 1) as f64;
        GridSpec::new(&[(lo, hi)], &[h])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (*a, *b)).collect()
    }

    /// Coordinate of node `i` along `axis`; the last node sits exactly at `hi`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        let mut rem = flat;
        for k in (0..d).rev() {
            idx[k] = rem % self.counts[k];
            rem /= self.counts[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.coord(k, i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Product trapezoid quadrature weight of a node.
    pub fn trapezoid_weight(&self, flat: usize) -> f64 {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let edge = i == 0 || i + 1 == self.counts[k];
                if edge && self.counts[k] > 1 {
                    0.5 * self.spacing[k]
                } else {
                    self.spacing[k]
                }
            })
            .product()
    }

    /// Index of the node closest to `x` (clamped to the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|k| {
                let s = ((x[k] - self.lo[k]) / self.spacing[k]).round();
                s.clamp(0.0, (self.counts[k] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Cell containing `x` and the local coordinates in `[0, 1]^d`, or `None`
    /// when `x` lies outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut base = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for (k, xk) in x.iter().enumerate().take(self.dim()) {
            let s = (xk - self.lo[k]) / self.spacing[k];
            let last = (self.counts[k] - 1) as f64;
            if !(s >= -1e-12 && s <= last + 1e-12) {
                return None;
            }
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(self.counts[k].saturating_sub(2));
            base.push(i);
            frac.push(if self.counts[k] > 1 { s - i as f64 } else { 0.0 });
        }
        Some((base, frac))
    }

    /// Multilinear interpolation of nodal values; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let (base, frac) = self.locate(x)?;
        let d = self.dim();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    if self.counts[k] > 1 {
                        idx[k] += 1;
                    }
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * values[self.flat_index(&idx)];
            }
        }
        Some(acc)
    }
}

/// Nonnegative density sampled at the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(HkError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(HkError::InvalidGrid(
                "density values must be finite and nonnegative".into(),
            ));
        }
        Ok(GridDensity { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        GridDensity::new(grid, values)
    }

    /// Trapezoid-rule total mass.
    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.trapezoid_weight(i))
            .sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Extended-real scalar field sampled at the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(HkError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(HkError::InvalidGrid("grid function contains NaN".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        GridFunction::new(grid, values)
    }

    /// Multilinear interpolation; falls back to the nearest node when a
    /// neighbouring value is infinite. `None` outside the box.
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        let v = self.grid.interpolate(&self.values, x)?;
        if v.is_nan() || v.is_infinite() {
            Some(self.values[self.grid.nearest_node(x)])
        } else {
            Some(v)
        }
    }

    /// Finite-difference gradient at a node: central in the interior,
    /// second-order one-sided at the boundary. `None` if a stencil value is
    /// infinite.
    pub fn nodal_gradient(&self, flat: usize) -> Option<Vec<f64>> {
        let idx = self.grid.multi_index(flat);
        let mut g = Vec::with_capacity(idx.len());
        for k in 0..idx.len() {
            let n = self.grid.counts()[k];
            let h = self.grid.spacing()[k];
            let at = |i: usize| {
                let mut j = idx.clone();
                j[k] = i;
                self.values[self.grid.flat_index(&j)]
            };
            let i = idx[k];
            let d = if n < 2 {
                0.0
            } else if n == 2 {
                (at(1) - at(0)) / h
            } else if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * at(i) - 4.0 * at(i - 1) + at(i - 2)) / (2.0 * h)
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * h)
            };
            if !d.is_finite() {
                return None;
            }
            g.push(d);
        }
        Some(g)
    }

    /// Multilinear interpolation of the nodal gradients.
    pub fn gradient_at(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.grid.dim();
        let (base, frac) = self.grid.locate(x)?;
        let mut acc = vec![0.0; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    if self.grid.counts()[k] > 1 {
                        idx[k] += 1;
                    }
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                let g = self.nodal_gradient(self.grid.flat_index(&idx))?;
                for k in 0..d {
                    acc[k] += w * g[k];
                }
            }
        }
        Some(acc)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One atom per node with mass `value * trapezoid weight`; zero nodes dropped.
pub fn grid_to_measure(g: &GridDensity) -> DiscreteMeasure {
    let atoms = g
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| Atom::new(g.grid.node(i), v * g.grid.trapezoid_weight(i)))
        .collect();
    DiscreteMeasure {
        dim: g.grid.dim(),
        atoms,
    }
}

/// On-disk measure format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub dimension: usize,
    pub atoms: Vec<Atom>,
}

fn default_version() -> u32 {
    FILE_FORMAT_VERSION
}

impl From<&DiscreteMeasure> for MeasureFile {
    fn from(mu: &DiscreteMeasure) -> Self {
        MeasureFile {
            version: FILE_FORMAT_VERSION,
            dimension: mu.dim(),
            atoms: mu.atoms().to_vec(),
        }
    }
}

impl TryFrom<MeasureFile> for DiscreteMeasure {
    type Error = HkError;

    fn try_from(f: MeasureFile) -> Result<Self> {
        DiscreteMeasure::new(f.dimension, f.atoms)
    }
}

/// A grid value that may be infinite. Serialized as a number, or as one of
/// the strings `"inf"`, `"+inf"`, `"-inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtValue {
    Num(f64),
    Text(String),
}

impl ExtValue {
    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtValue::Text("inf".into())
        } else if v == f64::NEG_INFINITY {
            ExtValue::Text("-inf".into())
        } else {
            ExtValue::Num(v)
        }
    }

    pub fn to_f64(&self) -> Result<f64> {
        match self {
            ExtValue::Num(v) => Ok(*v),
            ExtValue::Text(s) => match s.trim() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(HkError::InvalidGrid(format!("unrecognised grid value {other:?}"))),
            },
        }
    }
}

/// On-disk grid format shared by densities and potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub spacing: Vec<f64>,
    pub values: Vec<ExtValue>,
}

impl GridFile {
    pub fn from_parts(grid: &GridSpec, values: &[f64]) -> Self {
        GridFile {
            version: FILE_FORMAT_VERSION,
            bounds: grid.bounds().iter().map(|b| [b.0, b.1]).collect(),
            spacing: grid.spacing().to_vec(),
            values: values.iter().map(|v| ExtValue::from_f64(*v)).collect(),
        }
    }

    pub fn into_parts(self) -> Result<(GridSpec, Vec<f64>)> {
        let bounds: Vec<(f64, f64)> = self.bounds.iter().map(|b| (b[0], b[1])).collect();
        let grid = GridSpec::new(&bounds, &self.spacing)?;
        let values = self.values.iter().map(|v| v.to_f64()).collect::<Result<Vec<_>>>()?;
        if values.len() != grid.len() {
            return Err(HkError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok((grid, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, atoms.iter().map(|(x, w)| Atom::new(vec![*x], *w)).collect()).unwrap()
    }

    #[test]
    fn zero_masses_are_dropped_and_dims_checked() {
        let mu = m(&[(0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(mu.len(), 1);
        let bad = DiscreteMeasure::new(2, vec![Atom::new(vec![0.0], 1.0)]);
        assert!(matches!(bad, Err(HkError::DimensionMismatch { .. })));
        assert!(DiscreteMeasure::new(1, vec![Atom::new(vec![0.0], -1.0)]).is_err());
    }

    #[test]
    fn merging_identifies_signed_zero() {
        let mu = m(&[(0.0, 1.0), (-0.0, 2.0), (1.0, 1.0)]).merged();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.atoms()[0].mass, 3.0);
    }

    #[test]
    fn decomposition_examples() {
        let third = std::f64::consts::FRAC_PI_3;
        let d = decompose_supports(&m(&[(0.0, 1.0)]), &m(&[(third, 1.0)])).unwrap();
        assert_eq!((d.near0.len(), d.near1.len()), (1, 1));
        let d = decompose_supports(&m(&[(0.0, 1.0)]), &m(&[(2.0, 1.0)])).unwrap();
        assert_eq!((d.far0.len(), d.far1.len()), (1, 1));
        let d = decompose_supports(&m(&[(0.0, 1.0)]), &m(&[(third, 1.0), (2.0, 3.0)])).unwrap();
        assert_eq!(d.near1, vec![0]);
        assert_eq!(d.far1, vec![1]);
        assert_eq!(d.far_mass1, 3.0);
    }

    #[test]
    fn reducedness_boundary_is_far() {
        let third = std::f64::consts::FRAC_PI_3;
        assert_eq!(
            is_reduced(&m(&[(0.0, 1.0)]), &m(&[(third, 1.0)])).unwrap(),
            Reducedness::StronglyReduced
        );
        assert_eq!(
            is_reduced(&m(&[(0.0, 1.0)]), &m(&[(2.0, 1.0)])).unwrap(),
            Reducedness::NotReduced
        );
        assert_eq!(
            is_reduced(&m(&[(0.0, 1.0)]), &m(&[(FRAC_PI_2, 1.0)])).unwrap(),
            Reducedness::NotReduced
        );
        let a = DiscreteMeasure::dirac(vec![0.0, 0.0], 1.0).unwrap();
        assert!(is_reduced(&a, &m(&[(0.0, 1.0)])).is_err());
    }

    #[test]
    fn rescaling_examples() {
        let mu = m(&[(1.0, 2.0)]);
        let (c, f) = rescale_to_canonical(1.0, 4.0, &mu).unwrap();
        assert_eq!((c, f), (mu.clone(), 1.0));
        let (c, f) = rescale_to_canonical(1.0, 1.0, &mu).unwrap();
        assert_eq!(c.atoms()[0].x[0], 0.5);
        assert_eq!(f, 4.0);
        assert!(matches!(
            rescale_to_canonical(0.0, 1.0, &mu),
            Err(HkError::NonpositiveParameter { .. })
        ));
    }

    #[test]
    fn trapezoid_grid_mass() {
        let g = GridSpec::new(&[(0.0, 1.0)], &[0.5]).unwrap();
        assert_eq!(g.len(), 3);
        let dens = GridDensity::new(g.clone(), vec![1.0; 3]).unwrap();
        let mu = grid_to_measure(&dens);
        assert!((mu.total_mass() - 1.0).abs() < 1e-15);
        assert!(grid_to_measure(&GridDensity::new(g.clone(), vec![0.0; 3]).unwrap()).is_empty());
        let spike = grid_to_measure(&GridDensity::new(g, vec![0.0, 2.0, 0.0]).unwrap());
        assert_eq!(spike.len(), 1);
        assert_eq!(spike.atoms()[0].x, vec![0.5]);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_density_in_2d() {
        let g = GridSpec::new(&[(0.0, 1.0), (0.0, 2.0)], &[0.25, 0.5]).unwrap();
        let dens = GridDensity::from_fn(g, |x| 1.0 + x[0] + 2.0 * x[1]).unwrap();
        // exact integral over [0,1]x[0,2] of 1 + x + 2y = 2 + 1 + 4
        assert!((dens.total_mass() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn grid_indexing_round_trip() {
        let g = GridSpec::new(&[(0.0, 1.0), (-1.0, 1.0)], &[0.5, 0.25]).unwrap();
        assert_eq!(g.counts(), &[3, 9]);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.node(1), vec![0.0, -0.75]);
        let vals: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x[0] - x[1]).collect();
        let v = g.interpolate(&vals, &[0.3, 0.1]).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        assert!(g.interpolate(&vals, &[2.0, 0.0]).is_none());
    }

    #[test]
    fn grid_file_accepts_infinite_values() {
        let text = r#"{"box": [[0, 1]], "spacing": [0.5], "values": [1.0, "inf", "-inf"]}"#;
        let f: GridFile = serde_json::from_str(text).unwrap();
        let (g, v) = f.into_parts().unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(v[1], f64::INFINITY);
        assert_eq!(v[2], f64::NEG_INFINITY);
    }

    fn arb_measure(dim: usize) -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((prop::collection::vec(-3.0..3.0f64, dim), 0.01..2.0f64), 1..6).prop_map(move |atoms| {
            DiscreteMeasure::new(dim, atoms.into_iter().map(|(x, w)| Atom::new(x, w)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn decomposition_is_symmetric_and_mass_exact(a in arb_measure(2), b in arb_measure(2)) {
            let d = decompose_supports(&a, &b).unwrap();
            let e = decompose_supports(&b, &a).unwrap();
            prop_assert_eq!(&d.near0, &e.near1);
            prop_assert_eq!(&d.far0, &e.far1);
            prop_assert_eq!(&d.near1, &e.near0);
            let total: f64 = a.atoms().iter().map(|x| x.mass).sum();
            let near: f64 = d.near0.iter().map(|&i| a.atoms()[i].mass).sum();
            let far: f64 = d.far0.iter().map(|&i| a.atoms()[i].mass).sum();
            prop_assert!((near + far - total).abs() <= 1e-12 * total.max(1.0));
            prop_assert_eq!(d.near0.len() + d.far0.len(), a.len());
        }

        #[test]
        fn rescaling_round_trip(a in arb_measure(3), alpha in 0.1..10.0f64, beta in 0.1..10.0f64) {
            let (c, _) = rescale_to_canonical(alpha, beta, &a).unwrap();
            let back = rescale_from_canonical(alpha, beta, &c).unwrap();
            for (p, q) in a.atoms().iter().zip(back.atoms()) {
                for (u, v) in p.x.iter().zip(&q.x) {
                    prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
                }
                prop_assert_eq!(p.mass, q.mass);
            }
        }
    }
}
