//! HK geodesics: Lagrangian curves built from optimal cone lifts, their
//! restrictions and splittings, and densities transported along the
//! characteristic flow of a grid potential.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cone_geometry::{cone_distance, cone_geodesic, dist, ConePoint};
use crate::error::{HkError, Result};
use crate::hopf_lax::{nodal_hessian, transport_point};
use crate::let_solver::{lift_plan_to_cone, solve_let, LiftedPair, SolverOptions};
use crate::measures::{check_dims, coord_key, Atom, DiscreteMeasure, GridDensity, GridFunction};

/// A geodesic `t -> μ_t` represented by weighted pairs of cone points; the
/// sample at `t` is the homogeneous projection of the per-pair cone
/// geodesics.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicCurve {
    pub dim: usize,
    pub pairs: Vec<LiftedPair>,
    pub hk_squared: f64,
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
}

fn cone_cost(pairs: &[LiftedPair]) -> f64 {
    pairs
        .iter()
        .map(|p| p.weight * cone_distance(&p.from, &p.to, FRAC_PI_2).powi(2))
        .sum()
}

/// Both radii positive and the base points at least pi/2 apart.
fn violates_threshold(p: &LiftedPair) -> bool {
    !p.from.is_vertex() && !p.to.is_vertex() && dist(&p.from.x, &p.to.x) >= FRAC_PI_2
}

pub fn build_geodesic(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &SolverOptions) -> Result<GeodesicCurve> {
    check_dims(mu0, mu1)?;
    let sol = solve_let(mu0, mu1, opts)?;
    let pairs = lift_plan_to_cone(&sol.plan, mu0, mu1, opts.tolerance.max(1e-9))?;
    if let Some(p) = pairs.iter().find(|p| violates_threshold(p)) {
        return Err(HkError::DegenerateGeodesic {
            separation: dist(&p.from.x, &p.to.x),
        });
    }
    Ok(GeodesicCurve {
        dim: mu0.dim(),
        pairs,
        hk_squared: sol.hk_squared,
        mu0: mu0.clone(),
        mu1: mu1.clone(),
    })
}

impl GeodesicCurve {
    /// Builds a curve directly from cone pairs; `hk_squared` is the cone cost.
    pub fn from_pairs(dim: usize, pairs: Vec<LiftedPair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| violates_threshold(p)) {
            return Err(HkError::DegenerateGeodesic {
                separation: dist(&p.from.x, &p.to.x),
            });
        }
        let mut c = GeodesicCurve {
            dim,
            hk_squared: cone_cost(&pairs),
            pairs,
            mu0: DiscreteMeasure::empty(dim),
            mu1: DiscreteMeasure::empty(dim),
        };
        c.mu0 = c.sample(0.0)?;
        c.mu1 = c.sample(1.0)?;
        Ok(c)
    }

    pub fn sample(&self, t: f64) -> Result<DiscreteMeasure> {
        sample(self, t)
    }

    pub fn mass_at(&self, t: f64) -> Result<f64> {
        Ok(self.sample(t)?.total_mass())
    }

    /// Cone cost of the lifted pairs; equals `hk_squared` for optimal lifts.
    pub fn cone_cost(&self) -> f64 {
        cone_cost(&self.pairs)
    }
}

fn pair_point(p: &LiftedPair, t: f64) -> Result<ConePoint> {
    cone_geodesic(&p.from, &p.to, t)
}

pub fn sample(curve: &GeodesicCurve, t: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HkError::DomainError(format!("geodesic time {t} outside [0, 1]")));
    }
    let mut atoms = Vec::with_capacity(curve.pairs.len());
    for p in &curve.pairs {
        let z = pair_point(p, t)?;
        let m = p.weight * z.r * z.r;
        if m > 0.0 {
            atoms.push(Atom::new(z.x, m));
        }
    }
    Ok(DiscreteMeasure::new(curve.dim, atoms)?.merged())
}

/// Samples at several times in parallel.
pub fn sample_many(curve: &GeodesicCurve, times: &[f64]) -> Result<Vec<DiscreteMeasure>> {
    times.par_iter().map(|t| sample(curve, *t)).collect()
}

/// Index of each pair's time-`s` position among the atoms of `μ_s`
/// (`None` for pairs at the vertex at time `s`).
fn pair_atoms_at(curve: &GeodesicCurve, s: f64) -> Result<(DiscreteMeasure, Vec<Option<usize>>)> {
    let mu_s = sample(curve, s)?;
    let index: HashMap<Vec<u64>, usize> = mu_s
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| (coord_key(&a.x), i))
        .collect();
    let mut out = Vec::with_capacity(curve.pairs.len());
    for p in &curve.pairs {
        let z = pair_point(p, s)?;
        out.push(if z.r > 0.0 {
            index.get(&coord_key(&z.x)).copied()
        } else {
            None
        });
    }
    Ok((mu_s, out))
}

/// `ν_t = (T_{s->t}, q_{s->t})_* (ϱ_s μ_s)`: every pair is reweighted by the
/// weight of the atom of `μ_s` it passes through at time `s`.
pub fn restrict_geodesic(curve: &GeodesicCurve, s: f64, rho: &[f64]) -> Result<GeodesicCurve> {
    if !(0.0 < s && s < 1.0) {
        return Err(HkError::DomainError(format!("restriction time {s} outside (0, 1)")));
    }
    let (mu_s, idx) = pair_atoms_at(curve, s)?;
    if rho.len() != mu_s.len() {
        return Err(HkError::UndefinedWeight(format!(
            "{} weights for {} atoms of the time-{s} sample",
            rho.len(),
            mu_s.len()
        )));
    }
    if let Some(w) = rho.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(HkError::UndefinedWeight(format!(
            "weight {w} is not a finite nonnegative number"
        )));
    }
    let mut pairs = Vec::new();
    for (p, i) in curve.pairs.iter().zip(idx) {
        let i = i.ok_or_else(|| HkError::UndefinedWeight("pair not located in the time-s sample".into()))?;
        let w = p.weight * rho[i];
        if w > 0.0 {
            pairs.push(LiftedPair {
                from: p.from.clone(),
                to: p.to.clone(),
                weight: w,
            });
        }
    }
    GeodesicCurve::from_pairs(curve.dim, pairs)
}

/// Splits the curve by a partition `(A, B)` of the atoms of `μ_s`.
pub fn split_singular(
    curve: &GeodesicCurve,
    s: f64,
    a: &[usize],
    b: &[usize],
) -> Result<(GeodesicCurve, GeodesicCurve)> {
    let n = sample(curve, s)?.len();
    let mut seen = vec![0u8; n];
    for &i in a.iter().chain(b) {
        if i >= n {
            return Err(HkError::NotAPartition(format!("index {i} out of range for {n} atoms")));
        }
        seen[i] += 1;
    }
    if let Some(i) = seen.iter().position(|c| *c != 1) {
        return Err(HkError::NotAPartition(format!("atom {i} appears {} times", seen[i])));
    }
    let mut ra = vec![0.0; n];
    for &i in a {
        ra[i] = 1.0;
    }
    let rb: Vec<f64> = ra.iter().map(|v| 1.0 - v).collect();
    Ok((restrict_geodesic(curve, s, &ra)?, restrict_geodesic(curve, s, &rb)?))
}

/// Density of `μ_t` sampled at the transported nodes `T_{s->t}(x)`, with
/// quadrature weights `w_x δ_s(t, x)` so that `Σ density · weight` is the
/// mass of `μ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportedDensity {
    pub t: f64,
    /// Source node of each sample.
    pub nodes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub density: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TransportedDensity {
    pub fn total_mass(&self) -> f64 {
        self.density.iter().zip(&self.weights).map(|(c, w)| c * w).sum()
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }

    /// `∫ E(c_t) dy` by the transported quadrature.
    pub fn integrate(&self, e: impl Fn(f64) -> f64) -> f64 {
        self.density
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| if *w == 0.0 { 0.0 } else { e(*c) * w })
            .sum()
    }

    pub fn to_measure(&self, dim: usize) -> Result<DiscreteMeasure> {
        let atoms = self
            .points
            .iter()
            .zip(self.density.iter().zip(&self.weights))
            .filter(|(_, (c, w))| *c * *w > 0.0)
            .map(|(x, (c, w))| Atom::new(x.clone(), c * w))
            .collect();
        DiscreteMeasure::new(dim, atoms)
    }
}

/// Transport, dilation and Jacobian of the flow at one node.
struct NodeFlow {
    target: Option<Vec<f64>>,
    alpha: f64,
    delta: f64,
}

/// `DT` for `T(x) = x + arctan(v)`, `v = tau grad xi / (1 + 2 tau xi)`.
fn flow_jacobian(xi: f64, g: &DVector<f64>, a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let d = g.len();
    let w = 1.0 + 2.0 * tau * xi;
    let v = g * (tau / w);
    let dv = (a - g * g.transpose() * (2.0 * tau / w)) * (tau / w);
    let n = v.norm();
    let jac_arctan = if n < 1e-8 {
        DMatrix::identity(d, d) * (1.0 - n * n / 3.0)
    } else {
        let vh = &v / n;
        let p = &vh * vh.transpose();
        &p / (1.0 + n * n) + (DMatrix::identity(d, d) - &p) * (n.atan() / n)
    };
    DMatrix::identity(d, d) + jac_arctan * dv
}

fn node_flow(xi_s: &GridFunction, hess: &[Option<DMatrix<f64>>], p: usize, tau: f64) -> Result<NodeFlow> {
    let x = xi_s.grid.node(p);
    let v = xi_s.values[p];
    let undefined = || HkError::DomainError(format!("potential not differentiable at node {p}"));
    let g = xi_s.nodal_gradient(p).ok_or_else(undefined)?;
    let a = hess[p].clone().ok_or_else(undefined)?;
    let w = 1.0 + 2.0 * tau * v;
    if w <= 0.0 && g.iter().all(|c| *c == 0.0) && w > -1e-12 {
        // all mass at this node has been absorbed by the vertex
        return Ok(NodeFlow {
            target: None,
            alpha: 0.0,
            delta: 1.0,
        });
    }
    let (target, q) = transport_point(v, &g, tau, &x)?;
    let delta = flow_jacobian(v, &DVector::from_vec(g), &a, tau).determinant();
    if !(delta > 0.0) {
        return Err(HkError::DegenerateJacobian { node: p, delta });
    }
    Ok(NodeFlow {
        target: Some(target),
        alpha: q * q,
        delta,
    })
}

fn check_flow_inputs(xi_s: &GridFunction, c_s: &GridDensity, s: f64, t: f64) -> Result<()> {
    if xi_s.grid != c_s.grid {
        return Err(HkError::InvalidGrid(
            "potential and density live on different grids".into(),
        ));
    }
    if !(0.0 < s && s < 1.0) || !(0.0..=1.0).contains(&t) {
        return Err(HkError::DomainError(format!(
            "need s in (0, 1) and t in [0, 1], got s = {s}, t = {t}"
        )));
    }
    Ok(())
}

fn hessians(xi_s: &GridFunction) -> Vec<Option<DMatrix<f64>>> {
    let grads: Vec<Option<Vec<f64>>> = (0..xi_s.grid.len()).map(|p| xi_s.nodal_gradient(p)).collect();
    (0..xi_s.grid.len()).map(|p| nodal_hessian(xi_s, &grads, p)).collect()
}

/// `c(t, T_{s->t}(x)) = c(s, x) α_s(t, x) / δ_s(t, x)` with `α = q^2` and
/// `δ = det DT_{s->t}` from finite-difference derivatives of `ξ_s`.
pub fn density_along_flow(xi_s: &GridFunction, c_s: &GridDensity, s: f64, t: f64) -> Result<TransportedDensity> {
    check_flow_inputs(xi_s, c_s, s, t)?;
    let hess = hessians(xi_s);
    transported(xi_s, c_s, &hess, s, t)
}

fn transported(
    xi_s: &GridFunction,
    c_s: &GridDensity,
    hess: &[Option<DMatrix<f64>>],
    s: f64,
    t: f64,
) -> Result<TransportedDensity> {
    let grid = &xi_s.grid;
    let flows: Vec<(usize, NodeFlow)> = (0..grid.len())
        .into_par_iter()
        .filter(|p| c_s.values[*p] > 0.0)
        .map(|p| node_flow(xi_s, hess, p, t - s).map(|f| (p, f)))
        .collect::<Result<_>>()?;
    let mut out = TransportedDensity {
        t,
        nodes: Vec::new(),
        points: Vec::new(),
        density: Vec::new(),
        weights: Vec::new(),
    };
    for (p, f) in flows {
        if let Some(target) = f.target {
            out.nodes.push(p);
            out.points.push(target);
            out.density.push(c_s.values[p] * f.alpha / f.delta);
            out.weights.push(grid.trapezoid_weight(p) * f.delta);
        }
    }
    Ok(out)
}

/// A grid geodesic determined by a potential `ξ_s` and a density `c_s` at
/// time `s`, defined through the flow `(T_{s->t}, q_{s->t})`.
#[derive(Debug, Clone)]
pub struct GridGeodesic {
    pub xi_s: GridFunction,
    pub c_s: GridDensity,
    pub s: f64,
    hess: Vec<Option<DMatrix<f64>>>,
}

impl GridGeodesic {
    pub fn new(xi_s: GridFunction, c_s: GridDensity, s: f64) -> Result<Self> {
        check_flow_inputs(&xi_s, &c_s, s, s)?;
        let hess = hessians(&xi_s);
        Ok(GridGeodesic { xi_s, c_s, s, hess })
    }

    pub fn density_at(&self, t: f64) -> Result<TransportedDensity> {
        check_flow_inputs(&self.xi_s, &self.c_s, self.s, t)?;
        transported(&self.xi_s, &self.c_s, &self.hess, self.s, t)
    }

    /// Cone point at time `t` of the characteristic through node `p`, per
    /// unit mass at time `s`.
    fn cone_point(&self, p: usize, t: f64) -> Result<ConePoint> {
        let f = node_flow(&self.xi_s, &self.hess, p, t - self.s)?;
        match f.target {
            Some(x) => ConePoint::new(x, f.alpha.sqrt()),
            None => Ok(ConePoint::vertex(self.xi_s.grid.dim())),
        }
    }

    /// `Σ_x m_s(x) d_cone((T_{s->0}, q_{s->0}), (T_{s->1}, q_{s->1}))^2`.
    pub fn hk_squared(&self) -> Result<f64> {
        let g = &self.xi_s.grid;
        let mut total = 0.0;
        for p in 0..g.len() {
            let c = self.c_s.values[p];
            if c > 0.0 {
                let a = self.cone_point(p, 0.0)?;
                let b = self.cone_point(p, 1.0)?;
                total += c * g.trapezoid_weight(p) * cone_distance(&a, &b, FRAC_PI_2).powi(2);
            }
        }
        Ok(total)
    }
}

/// Density profile `t -> c(t, T_{s->t}(x))` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub node: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub min_second_difference: f64,
    pub is_convex: bool,
    pub is_constant: bool,
}

/// Samples the profile on `times` (uniformly spaced) and tests discrete
/// convexity: second differences `>= -tolerance`.
pub fn check_density_convexity(
    geo: &GridGeodesic,
    node: usize,
    times: &[f64],
    tolerance: f64,
) -> Result<DensityProfile> {
    if node >= geo.xi_s.grid.len() {
        return Err(HkError::IndexOutOfRange(format!(
            "node {node} of {}",
            geo.xi_s.grid.len()
        )));
    }
    let c = geo.c_s.values[node];
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let f = node_flow(&geo.xi_s, &geo.hess, node, t - geo.s)?;
        values.push(if f.target.is_some() { c * f.alpha / f.delta } else { 0.0 });
    }
    let mut min2 = f64::INFINITY;
    for k in 1..times.len().saturating_sub(1) {
        let (h0, h1) = (times[k] - times[k - 1], times[k + 1] - times[k]);
        // divided second difference scaled to a uniform step
        let d2 = 2.0 * (h0 * values[k + 1] - (h0 + h1) * values[k] + h1 * values[k - 1]) / (h0 * h1 * (h0 + h1));
        min2 = min2.min(d2 * h0 * h1);
    }
    let spread = values.iter().map(|v| (v - values[0]).abs()).fold(0.0, f64::max);
    Ok(DensityProfile {
        node,
        times: times.to_vec(),
        min_second_difference: min2,
        is_convex: min2 >= -tolerance,
        is_constant: spread <= tolerance,
        values,
    })
}

/// Sup-norm chord check `‖c_t‖ <= (1 - t) ‖c_0‖ + t ‖c_1‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinfReport {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub bounds: Vec<f64>,
    /// Largest `‖c_t‖ - bound`; nonpositive when the bound holds.
    pub max_excess: f64,
    /// Times where the excess is above the tolerance.
    pub violations: Vec<(f64, f64)>,
}

pub fn linf_convexity_check(geo: &GridGeodesic, times: &[f64], tolerance: f64) -> Result<LinfReport> {
    let n0 = geo.density_at(0.0)?.max_density();
    let n1 = geo.density_at(1.0)?.max_density();
    let norms: Vec<f64> = times
        .iter()
        .map(|t| geo.density_at(*t).map(|d| d.max_density()))
        .collect::<Result<_>>()?;
    let bounds: Vec<f64> = times.iter().map(|t| (1.0 - t) * n0 + t * n1).collect();
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for ((t, n), b) in times.iter().zip(&norms).zip(&bounds) {
        let e = n - b;
        max_excess = max_excess.max(e);
        if e > tolerance {
            violations.push((*t, e));
        }
    }
    Ok(LinfReport {
        times: times.to_vec(),
        norms,
        bounds,
        max_excess,
        violations,
    })
}
