//! Generalized Hopf-Lax semigroup for `d/dt xi + |grad xi|^2 / 2 + 2 xi^2 = 0`
//! on grids and point sets, contact sets, transport maps along the flow and
//! the characteristic system.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cone_geometry::{add, arctan_vec, dist, dot, scale};
use crate::dual_potentials::{PointFunction, PotentialField};
use crate::error::{HkError, Result};
use crate::measures::{GridFunction, GridSpec};

/// Relative slack accepted in the feasibility check `1 + 2 tau min xi >= 0`.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// `P_a(t) = a / (1 + 2 a t)`, the flow of a constant initial value;
/// `P_{+inf}(t) = 1 / (2t)`.
pub fn constant_flow(a: f64, t: f64) -> f64 {
    if a == f64::INFINITY {
        return 1.0 / (2.0 * t);
    }
    let den = 1.0 + 2.0 * a * t;
    if den == 0.0 {
        return f64::NEG_INFINITY;
    }
    a / den
}

/// Lipschitz and semiconcavity bound `1 / (t (1 + 2 a t))` of `P_t xi` when
/// `xi >= a`.
pub fn lipschitz_bound(a: f64, t: f64) -> f64 {
    1.0 / (t * (1.0 + 2.0 * a * t))
}

/// `Z_tau(u', u) = (1 - 2 tau u) / (1 + 2 tau u')`, with `Z(+inf, u) = 0`.
pub fn z_factor(u_from: f64, u_to: f64, tau: f64) -> Result<f64> {
    if u_from == f64::INFINITY {
        return Ok(0.0);
    }
    let den = 1.0 + 2.0 * tau * u_from;
    let num = 1.0 - 2.0 * tau * u_to;
    if den < 0.0 || num < 0.0 || den.is_nan() || num.is_nan() {
        return Err(HkError::DomainError(format!(
            "Z factor needs 1 + 2 tau u' >= 0 and 1 - 2 tau u >= 0, got {den} and {num}"
        )));
    }
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// One candidate of the Hopf-Lax infimum: `(1 - cos^2 r / (1 + 2 tau xi)) / (2 tau)`.
fn hl_term(r: f64, xi: f64, tau: f64) -> f64 {
    let cap = 1.0 / (2.0 * tau);
    if r >= FRAC_PI_2 || xi == f64::INFINITY {
        return cap;
    }
    let w = 1.0 + 2.0 * tau * xi;
    let c = r.cos();
    if w <= 0.0 {
        // limit from t below the blow-up time
        return f64::NEG_INFINITY;
    }
    cap * (1.0 - c * c / w)
}

fn check_feasible(values: &[f64], tau: f64) -> Result<()> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min.is_finite() && 1.0 + 2.0 * tau * min < -FEASIBILITY_SLACK {
        return Err(HkError::InfeasiblePotential(format!(
            "1 + 2 tau min xi = {} < 0 for tau = {tau}",
            1.0 + 2.0 * tau * min
        )));
    }
    if min == f64::NEG_INFINITY {
        return Err(HkError::InfeasiblePotential("potential takes the value -inf".into()));
    }
    Ok(())
}

fn check_time(name: &'static str, t: f64, lo_open: bool, hi_open: bool) -> Result<()> {
    let ok = (if lo_open { t > 0.0 } else { t >= 0.0 }) && (if hi_open { t < 1.0 } else { t <= 1.0 });
    if !ok {
        return Err(HkError::DomainError(format!(
            "{name} = {t} outside the admissible time range"
        )));
    }
    Ok(())
}

/// `P_tau xi` on the nodes of the grid carrying `xi` (sources = grid nodes).
///
/// The infimum is taken exhaustively over all nodes within the open pi/2
/// ball, together with the cap `1 / (2 tau)` coming from sources outside it.
pub fn forward_operator(xi: &GridFunction, tau: f64) -> Result<GridFunction> {
    if !(tau > 0.0) {
        return Err(HkError::NonpositiveParameter {
            name: "tau",
            value: tau,
        });
    }
    check_feasible(&xi.values, tau)?;
    let grid = &xi.grid;
    let d = grid.dim();
    let reach: Vec<usize> = (0..d)
        .map(|k| (FRAC_PI_2 / grid.spacing()[k]).ceil() as usize)
        .collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|q| {
            let x = grid.node(q);
            let qi = grid.multi_index(q);
            let lo: Vec<usize> = (0..d).map(|k| qi[k].saturating_sub(reach[k])).collect();
            let hi: Vec<usize> = (0..d).map(|k| (qi[k] + reach[k]).min(grid.counts()[k] - 1)).collect();
            let mut best = 1.0 / (2.0 * tau);
            let mut idx = lo.clone();
            loop {
                let p = grid.flat_index(&idx);
                let v = xi.values[p];
                if v != f64::INFINITY {
                    let r = dist(&x, &grid.node(p));
                    best = best.min(hl_term(r, v, tau));
                }
                // odometer over the window
                let mut k = d;
                loop {
                    if k == 0 {
                        return best;
                    }
                    k -= 1;
                    if idx[k] < hi[k] {
                        idx[k] += 1;
                        idx[k + 1..d].copy_from_slice(&lo[k + 1..d]);
                        break;
                    }
                }
            }
        })
        .collect();
    GridFunction::new(grid.clone(), values)
}

/// `xi_t = P_t xi_0` for `t` in `(0, 1]`; requires `xi_0 >= -1/2`.
pub fn hopf_lax_forward(xi0: &GridFunction, t: f64) -> Result<GridFunction> {
    check_time("t", t, true, false)?;
    check_half(&xi0.values, -1.0)?;
    forward_operator(xi0, t)
}

/// `bar xi_t = R_{1-t} bar xi_1 = -P_{1-t}(-bar xi_1)` for `t` in `[0, 1)`.
pub fn hopf_lax_backward(xibar1: &GridFunction, t: f64) -> Result<GridFunction> {
    check_time("t", t, false, true)?;
    check_half(&xibar1.values, 1.0)?;
    let neg = GridFunction::new(xibar1.grid.clone(), xibar1.values.iter().map(|v| -v).collect())?;
    let fwd = forward_operator(&neg, 1.0 - t)?;
    GridFunction::new(fwd.grid.clone(), fwd.values.iter().map(|v| -v).collect())
}

/// `sign = -1`: requires values `>= -1/2`; `sign = +1`: values `<= 1/2`.
fn check_half(values: &[f64], sign: f64) -> Result<()> {
    for v in values {
        if sign < 0.0 && *v < -0.5 - FEASIBILITY_SLACK {
            return Err(HkError::InfeasiblePotential(format!(
                "forward potential value {v} < -1/2"
            )));
        }
        if sign > 0.0 && *v > 0.5 + FEASIBILITY_SLACK {
            return Err(HkError::InfeasiblePotential(format!(
                "backward potential value {v} > 1/2"
            )));
        }
    }
    Ok(())
}

/// `P_tau` applied to a potential given on a point set, evaluated at queries.
pub fn forward_from_points(sources: &PointFunction, queries: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(HkError::NonpositiveParameter {
            name: "tau",
            value: tau,
        });
    }
    check_feasible(&sources.values, tau)?;
    Ok(queries
        .par_iter()
        .map(|x| {
            sources
                .points
                .iter()
                .zip(&sources.values)
                .filter(|(_, v)| **v != f64::INFINITY)
                .map(|(y, v)| hl_term(dist(x, y), *v, tau))
                .fold(1.0 / (2.0 * tau), f64::min)
        })
        .collect())
}

/// Forward solution at time `t` on the nodes of `grid` from point sources.
pub fn hopf_lax_forward_points(xi0: &PointFunction, grid: &GridSpec, t: f64) -> Result<GridFunction> {
    check_time("t", t, true, false)?;
    check_half(&xi0.values, -1.0)?;
    let values = forward_from_points(xi0, &grid.nodes(), t)?;
    GridFunction::new(grid.clone(), values)
}

/// Backward solution at time `t` on the nodes of `grid` from point sources.
pub fn hopf_lax_backward_points(xibar1: &PointFunction, grid: &GridSpec, t: f64) -> Result<GridFunction> {
    check_time("t", t, false, true)?;
    check_half(&xibar1.values, 1.0)?;
    if t == 1.0 {
        return Err(HkError::DomainError("backward evolution needs t < 1".into()));
    }
    let neg = PointFunction::new(xibar1.points.clone(), xibar1.values.iter().map(|v| -v).collect())?;
    let values = forward_from_points(&neg, &grid.nodes(), 1.0 - t)?;
    GridFunction::new(grid.clone(), values.iter().map(|v| -v).collect())
}

fn ext_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Max-norm of `P_t xi0 - P_{t-s}(P_s xi0)` over the grid nodes.
pub fn semigroup_residual(xi0: &GridFunction, s: f64, t: f64) -> Result<f64> {
    if !(0.0 < s && s < t && t <= 1.0) {
        return Err(HkError::DomainError(format!(
            "need 0 < s < t <= 1, got s = {s}, t = {t}"
        )));
    }
    let direct = hopf_lax_forward(xi0, t)?;
    let mid = hopf_lax_forward(xi0, s)?;
    let composed = forward_operator(&mid, t - s)?;
    Ok(direct
        .values
        .iter()
        .zip(&composed.values)
        .map(|(a, b)| ext_diff(*a, *b))
        .fold(0.0, f64::max))
}

/// Largest difference quotient between neighbouring nodes with finite values.
pub fn discrete_lipschitz(xi: &GridFunction) -> f64 {
    let g = &xi.grid;
    let mut best: f64 = 0.0;
    for p in 0..g.len() {
        let idx = g.multi_index(p);
        for k in 0..g.dim() {
            if idx[k] + 1 < g.counts()[k] {
                let mut j = idx.clone();
                j[k] += 1;
                let (a, b) = (xi.values[p], xi.values[g.flat_index(&j)]);
                if a.is_finite() && b.is_finite() {
                    best = best.max((a - b).abs() / g.spacing()[k]);
                }
            }
        }
    }
    best
}

/// Nodes where forward and backward solutions agree, with the fixed sets
/// `Ξ^-` (`xi_0 = -1/2`, detected as `xi_t = -1/(2(1-t))`) and `Ξ^+`
/// (`bar xi_1 = 1/2`, detected as `bar xi_t = 1/(2t)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub t: f64,
    pub tolerance: f64,
    pub mask: Vec<bool>,
    pub minus: Vec<bool>,
    pub plus: Vec<bool>,
}

impl ContactSet {
    pub fn nodes(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn minus_nodes(&self) -> Vec<usize> {
        self.minus
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn plus_nodes(&self) -> Vec<usize> {
        self.plus
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Default contact tolerance for a grid: the forward solution is
/// `Λ_a(t)`-semiconcave and the backward one `Λ_ā(1-t)`-semiconvex, so the
/// node nearest to a contact point sees a gap of at most
/// `(Λ_a(t) + Λ_ā(1-t)) Σ h_k^2 / 8`.
pub fn contact_tolerance(spacing: &[f64], min_xi0: f64, max_xibar1: f64, t: f64) -> f64 {
    let h2: f64 = spacing.iter().map(|h| h * h).sum();
    (lipschitz_bound(min_xi0, t) + lipschitz_bound(-max_xibar1, 1.0 - t)) * h2 / 8.0
}

pub fn contact_set(xi_t: &GridFunction, xibar_t: &GridFunction, t: f64, tolerance: f64) -> Result<ContactSet> {
    if xi_t.grid != xibar_t.grid {
        return Err(HkError::InvalidGrid(
            "forward and backward solutions live on different grids".into(),
        ));
    }
    check_time("t", t, true, true)?;
    let n = xi_t.values.len();
    let mut mask = vec![false; n];
    let mut minus = vec![false; n];
    let mut plus = vec![false; n];
    let fixed_minus = -1.0 / (2.0 * (1.0 - t));
    let fixed_plus = 1.0 / (2.0 * t);
    for p in 0..n {
        let (a, b) = (xi_t.values[p], xibar_t.values[p]);
        let gap = if a == b { 0.0 } else { a - b };
        if gap < -tolerance || gap.is_nan() {
            return Err(HkError::OrderViolation { node: p, gap });
        }
        mask[p] = gap <= tolerance;
        minus[p] = ext_diff(a, fixed_minus) <= tolerance && mask[p];
        plus[p] = ext_diff(b, fixed_plus) <= tolerance && mask[p];
    }
    Ok(ContactSet {
        t,
        tolerance,
        mask,
        minus,
        plus,
    })
}

/// `T_{s->t}(x) = x + arctan(tau g / (1 + 2 tau xi))` and
/// `q = ((1 + 2 tau xi)^2 + tau^2 |g|^2)^{1/2}` with `tau = t - s`.
pub fn transport_point(xi: f64, grad: &[f64], tau: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let w = 1.0 + 2.0 * tau * xi;
    if !(w > 0.0) {
        return Err(HkError::VertexRegion { denominator: w });
    }
    let t = add(x, &arctan_vec(&scale(grad, tau / w)));
    let q = (w * w + tau * tau * dot(grad, grad)).sqrt();
    Ok((t, q))
}

/// Transport-dilation pair `(T_{s->t}(x), q_{s->t}(x))` from a potential at
/// time `s`. Meaningful on contact nodes only.
pub fn transport_map(xi_s: &dyn PotentialField, s: f64, t: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let v = xi_s
        .value(x)
        .ok_or_else(|| HkError::DomainError(format!("potential undefined at {x:?}")))?;
    let g = xi_s
        .gradient(x)
        .ok_or_else(|| HkError::DomainError(format!("potential gradient undefined at {x:?}")))?;
    transport_point(v, &g, t - s, x)
}

/// `|(1 - 2 tau xi_t(T))(1 + 2 tau xi_s(x)) - cos^2 |x - T||`.
pub fn transport_identity_residual(xi_s_at_x: f64, xi_t_at_target: f64, tau: f64, x: &[f64], target: &[f64]) -> f64 {
    let r = dist(x, target);
    let c2 = if r >= FRAC_PI_2 { 0.0 } else { r.cos().powi(2) };
    ((1.0 - 2.0 * tau * xi_t_at_target) * (1.0 + 2.0 * tau * xi_s_at_x) - c2).abs()
}

/// Value, gradient and Hessian of a potential at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet {
    pub fn constant(dim: usize, value: f64) -> Self {
        Jet {
            value,
            grad: DVector::zeros(dim),
            hess: DMatrix::zeros(dim, dim),
        }
    }
}

/// A family `t -> xi_t` with second-order jets, used to drive the
/// characteristic system.
pub trait XiFamily: Send + Sync {
    fn dim(&self) -> usize;
    fn jet(&self, t: f64, x: &[f64]) -> Result<Jet>;
    /// `xi_t(x) - bar xi_t(x)` when the backward solution is known.
    fn contact_gap(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `xi_t = P_a(t)` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFamily {
    pub dim: usize,
    pub a: f64,
}

impl XiFamily for ConstantFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, t: f64, _x: &[f64]) -> Result<Jet> {
        Ok(Jet::constant(self.dim, constant_flow(self.a, t)))
    }

    fn contact_gap(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `k(z) = cos^2 |z|` with gradient and Hessian, for `|z| < pi/2`.
fn cos2_jet(z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = z.len();
    let r = dot(z, z).sqrt();
    let zv = DVector::from_column_slice(z);
    let k = r.cos().powi(2);
    // s1 = k'(r) / r and m = (k''(r) - k'(r)/r) / r^2, both smooth at r = 0
    let (s1, m) = if r < 1e-4 {
        let r2 = r * r;
        (-2.0 + 4.0 * r2 / 3.0, 8.0 / 3.0 - 16.0 * r2 / 15.0)
    } else {
        let s1 = -(2.0 * r).sin() / r;
        let kpp = -2.0 * (2.0 * r).cos();
        (s1, (kpp - s1) / (r * r))
    };
    let grad = &zv * s1;
    let hess = DMatrix::identity(d, d) * s1 + &zv * zv.transpose() * m;
    (k, grad, hess)
}

type JetFn = dyn Fn(&[f64]) -> Option<Jet> + Send + Sync;

/// Base jet, gradient and Hessian in `y`, and the jet `(k, gk, hk)` of `cos^2`.
type NewtonTerms = (Jet, DVector<f64>, DMatrix<f64>, f64, DVector<f64>, DMatrix<f64>);

/// Smooth flow `xi_t` obtained from a smooth potential at time `s` through
/// the stationary point of the Hopf-Lax functional. Valid for `t` before and
/// after `s` as long as characteristics do not cross (small `|t - s|` times
/// the semiconcavity of the base).
#[derive(Clone)]
pub struct SmoothHopfLax {
    dim: usize,
    s: f64,
    base: Arc<JetFn>,
}

impl SmoothHopfLax {
    pub fn new(dim: usize, s: f64, base: impl Fn(&[f64]) -> Option<Jet> + Send + Sync + 'static) -> Self {
        SmoothHopfLax {
            dim,
            s,
            base: Arc::new(base),
        }
    }

    /// Base jets from nodal finite differences of a grid potential,
    /// interpolated multilinearly.
    pub fn from_grid(xi_s: GridFunction, s: f64) -> Self {
        let dim = xi_s.grid.dim();
        let grads: Vec<Option<Vec<f64>>> = (0..xi_s.grid.len()).map(|p| xi_s.nodal_gradient(p)).collect();
        let hess: Vec<Option<DMatrix<f64>>> = (0..xi_s.grid.len()).map(|p| nodal_hessian(&xi_s, &grads, p)).collect();
        let xi = Arc::new(xi_s);
        SmoothHopfLax::new(dim, s, move |x| {
            let value = xi.value_at(x)?;
            let grad = xi.gradient_at(x)?;
            let (base, frac) = xi.grid.locate(x)?;
            let mut h = DMatrix::zeros(dim, dim);
            for corner in 0..(1usize << dim) {
                let mut w = 1.0;
                let mut idx = base.clone();
                for k in 0..dim {
                    if corner >> k & 1 == 1 {
                        if xi.grid.counts()[k] > 1 {
                            idx[k] += 1;
                        }
                        w *= frac[k];
                    } else {
                        w *= 1.0 - frac[k];
                    }
                }
                if w != 0.0 {
                    h += hess[xi.grid.flat_index(&idx)].as_ref()? * w;
                }
            }
            Some(Jet {
                value,
                grad: DVector::from_vec(grad),
                hess: h,
            })
        })
    }

    pub fn base_time(&self) -> f64 {
        self.s
    }
}

/// Hessian at a node by differencing the nodal gradients, symmetrized.
pub(crate) fn nodal_hessian(xi: &GridFunction, grads: &[Option<Vec<f64>>], p: usize) -> Option<DMatrix<f64>> {
    let g = &xi.grid;
    let d = g.dim();
    let idx = g.multi_index(p);
    let mut h = DMatrix::zeros(d, d);
    for k in 0..d {
        let n = g.counts()[k];
        if n < 3 {
            continue;
        }
        let hk = g.spacing()[k];
        let at = |i: usize| -> Option<&Vec<f64>> {
            let mut j = idx.clone();
            j[k] = i;
            grads[g.flat_index(&j)].as_ref()
        };
        let i = idx[k];
        for c in 0..d {
            let v = if i == 0 {
                (-3.0 * at(0)?[c] + 4.0 * at(1)?[c] - at(2)?[c]) / (2.0 * hk)
            } else if i + 1 == n {
                (3.0 * at(i)?[c] - 4.0 * at(i - 1)?[c] + at(i - 2)?[c]) / (2.0 * hk)
            } else {
                (at(i + 1)?[c] - at(i - 1)?[c]) / (2.0 * hk)
            };
            h[(c, k)] = v;
        }
    }
    Some((&h + h.transpose()) * 0.5)
}

const NEWTON_MAX_ITER: usize = 100;

impl XiFamily for SmoothHopfLax {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, t: f64, x: &[f64]) -> Result<Jet> {
        let tau = t - self.s;
        let undefined = || HkError::DomainError(format!("base potential undefined near {x:?}"));
        if tau.abs() < 1e-14 {
            return (self.base)(x).ok_or_else(undefined);
        }
        let xv = DVector::from_column_slice(x);
        // start from the inverse characteristic guess y = x - arctan(tau g / w)
        let j0 = (self.base)(x).ok_or_else(undefined)?;
        let w0 = 1.0 + 2.0 * tau * j0.value;
        let mut y = if w0 > 0.0 {
            &xv - DVector::from_vec(arctan_vec((&j0.grad * (tau / w0)).as_slice()))
        } else {
            xv.clone()
        };
        let eval = |y: &DVector<f64>| -> Result<NewtonTerms> {
            let b = (self.base)(y.as_slice()).ok_or_else(undefined)?;
            let w = 1.0 + 2.0 * tau * b.value;
            if !(w > 0.0) {
                return Err(HkError::VertexRegion { denominator: w });
            }
            let z = &xv - y;
            if z.norm() >= FRAC_PI_2 {
                return Err(HkError::DomainError("stationary point left the pi/2 ball".into()));
            }
            let (k, gk, hk) = cos2_jet(z.as_slice());
            let gw = &b.grad * (2.0 * tau);
            let hw = &b.hess * (2.0 * tau);
            // h = k / w; gradient and Hessian in y
            let gy = -&gk / w - &gw * (k / (w * w));
            let hyy = &hk / w + (&gk * gw.transpose() + &gw * gk.transpose()) / (w * w) - &hw * (k / (w * w))
                + &gw * gw.transpose() * (2.0 * k / (w * w * w));
            Ok((b, gy, hyy, k, gk, hk))
        };
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (_, gy, hyy, ..) = eval(&y)?;
            let step = hyy
                .clone()
                .lu()
                .solve(&gy)
                .ok_or_else(|| HkError::DomainError("singular Hessian in Hopf-Lax stationary point".into()))?;
            y -= &step;
            if step.norm() <= 1e-15 * (1.0 + y.norm()) {
                converged = true;
                break;
            }
        }
        let (b, gy, hyy, k, gk, hk) = eval(&y)?;
        if !converged && gy.norm() > 1e-10 {
            return Err(HkError::NoConvergence {
                iterations: NEWTON_MAX_ITER,
                residual: gy.norm(),
            });
        }
        let w = 1.0 + 2.0 * tau * b.value;
        let gw = &b.grad * (2.0 * tau);
        let c = -1.0 / (2.0 * tau);
        let value = -c * (1.0 - k / w);
        let hx = &gk / w;
        let hxx = &hk / w;
        let hxy = -&hk / w - &gk * gw.transpose() / (w * w);
        let inv = hyy
            .clone()
            .try_inverse()
            .ok_or_else(|| HkError::DomainError("singular Hessian in Hopf-Lax stationary point".into()))?;
        let schur = hxx - &hxy * inv * hxy.transpose();
        Ok(Jet {
            value,
            grad: hx * c,
            hess: schur * c,
        })
    }
}

/// Closed-form forward solution from `xi_0 = (s0 - 1)/2` at `z0` and `+inf`
/// elsewhere; when `z1`, `s1` are given, the matching backward solution from
/// `bar xi_1 = (1 - s1)/2` at `z1` provides contact gaps.
#[derive(Debug, Clone)]
pub struct TwoDiracFamily {
    pub z0: Vec<f64>,
    pub s0: f64,
    pub z1: Vec<f64>,
    pub s1: f64,
}

impl TwoDiracFamily {
    /// Family for unit-scaled Diracs `r0^2 δ_{z0}`, `r1^2 δ_{z1}`.
    pub fn new(z0: Vec<f64>, r0: f64, z1: Vec<f64>, r1: f64) -> Self {
        let r = dist(&z0, &z1);
        let c = if r >= FRAC_PI_2 { 0.0 } else { r.cos() };
        TwoDiracFamily {
            s0: r1 / r0 * c,
            s1: r0 / r1 * c,
            z0,
            z1,
        }
    }

    pub fn forward_value(&self, t: f64, x: &[f64]) -> f64 {
        let c = 1.0 - t + t * self.s0;
        let r = dist(x, &self.z0);
        let k = if r >= FRAC_PI_2 { 0.0 } else { r.cos().powi(2) };
        (c - k) / (2.0 * t * c)
    }

    pub fn backward_value(&self, t: f64, x: &[f64]) -> f64 {
        let c = t + (1.0 - t) * self.s1;
        let r = dist(x, &self.z1);
        let k = if r >= FRAC_PI_2 { 0.0 } else { r.cos().powi(2) };
        (k - c) / (2.0 * (1.0 - t) * c)
    }

    pub fn xi0(&self) -> PointFunction {
        PointFunction {
            points: vec![self.z0.clone()],
            values: vec![(self.s0 - 1.0) / 2.0],
        }
    }

    pub fn xibar1(&self) -> PointFunction {
        PointFunction {
            points: vec![self.z1.clone()],
            values: vec![(1.0 - self.s1) / 2.0],
        }
    }
}

impl XiFamily for TwoDiracFamily {
    fn dim(&self) -> usize {
        self.z0.len()
    }

    fn jet(&self, t: f64, x: &[f64]) -> Result<Jet> {
        let d = self.dim();
        let c = 1.0 - t + t * self.s0;
        let z: Vec<f64> = x.iter().zip(&self.z0).map(|(a, b)| a - b).collect();
        if dot(&z, &z).sqrt() >= FRAC_PI_2 {
            return Ok(Jet::constant(d, 1.0 / (2.0 * t)));
        }
        let (k, gk, hk) = cos2_jet(&z);
        let f = 1.0 / (2.0 * t * c);
        Ok(Jet {
            value: (c - k) * f,
            grad: -gk * f,
            hess: -hk * f,
        })
    }

    fn contact_gap(&self, t: f64, x: &[f64]) -> Option<f64> {
        Some(self.forward_value(t, x) - self.backward_value(t, x))
    }
}

/// State of the characteristic system at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicState {
    pub t: f64,
    pub position: Vec<f64>,
    pub q: f64,
    pub b: DMatrix<f64>,
    pub delta: f64,
    /// Jet of `xi_t` at `position`.
    pub jet: Jet,
}

/// Worst centred-difference residuals of the second-order identities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowResiduals {
    /// `|T'' + 4 xi grad xi|`
    pub position: f64,
    /// `|q'' - |grad xi|^2 q|`
    pub dilation: f64,
    /// `|B'' + 4 (g g^T + xi A) B|`
    pub jacobian: f64,
    /// `|delta'' - delta ((tr A)^2 - |A|^2 - 4|g|^2 - 4 xi tr A)|`
    pub determinant: f64,
    /// `|delta - det B|`
    pub determinant_consistency: f64,
}

impl FlowResiduals {
    pub fn max(&self) -> f64 {
        self.position
            .max(self.dilation)
            .max(self.jacobian)
            .max(self.determinant)
            .max(self.determinant_consistency)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub s: f64,
    pub dt: f64,
    pub states: Vec<CharacteristicState>,
    pub residuals: FlowResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Largest admitted `|xi_t - bar xi_t|` along the trajectory.
    pub contact_tolerance: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: 1e-3,
            t_start: 0.0,
            t_end: 1.0,
            contact_tolerance: 1e-6,
        }
    }
}

struct FlatState {
    pos: DVector<f64>,
    q: f64,
    b: DMatrix<f64>,
    delta: f64,
}

impl FlatState {
    fn axpy(&self, k: &FlatState, h: f64) -> FlatState {
        FlatState {
            pos: &self.pos + &k.pos * h,
            q: self.q + k.q * h,
            b: &self.b + &k.b * h,
            delta: self.delta + k.delta * h,
        }
    }
}

fn rhs(family: &dyn XiFamily, t: f64, st: &FlatState) -> Result<FlatState> {
    let j = family.jet(t, st.pos.as_slice())?;
    Ok(FlatState {
        pos: j.grad.clone(),
        q: 2.0 * j.value * st.q,
        b: &j.hess * &st.b,
        delta: j.hess.trace() * st.delta,
    })
}

fn rk4_step(family: &dyn XiFamily, t: f64, st: &FlatState, h: f64) -> Result<FlatState> {
    let k1 = rhs(family, t, st)?;
    let k2 = rhs(family, t + h / 2.0, &st.axpy(&k1, h / 2.0))?;
    let k3 = rhs(family, t + h / 2.0, &st.axpy(&k2, h / 2.0))?;
    let k4 = rhs(family, t + h, &st.axpy(&k3, h))?;
    Ok(FlatState {
        pos: &st.pos + (&k1.pos + &k2.pos * 2.0 + &k3.pos * 2.0 + &k4.pos) * (h / 6.0),
        q: st.q + (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q) * h / 6.0,
        b: &st.b + (&k1.b + &k2.b * 2.0 + &k3.b * 2.0 + &k4.b) * (h / 6.0),
        delta: st.delta + (k1.delta + 2.0 * k2.delta + 2.0 * k3.delta + k4.delta) * h / 6.0,
    })
}

/// Integrates `T' = grad xi_t(T)`, `q' = 2 xi_t(T) q`, `B' = D^2 xi_t(T) B`,
/// `delta' = Δ xi_t(T) delta` from `T = x`, `q = 1`, `B = I`, `delta = 1` at
/// time `s`, forwards to `t_end` and backwards to `t_start`, on the uniform
/// grid `s + k dt`.
pub fn characteristic_flow(family: &dyn XiFamily, s: f64, x: &[f64], opts: &FlowOptions) -> Result<Trajectory> {
    if !(opts.dt > 0.0) {
        return Err(HkError::NonpositiveParameter {
            name: "dt",
            value: opts.dt,
        });
    }
    if !(opts.t_start <= s && s <= opts.t_end) {
        return Err(HkError::DomainError(format!(
            "start time {s} outside [{}, {}]",
            opts.t_start, opts.t_end
        )));
    }
    let d = family.dim();
    if x.len() != d {
        return Err(HkError::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    let n_fwd = ((opts.t_end - s) / opts.dt + 1e-9).floor() as usize;
    let n_back = ((s - opts.t_start) / opts.dt + 1e-9).floor() as usize;
    let init = FlatState {
        pos: DVector::from_column_slice(x),
        q: 1.0,
        b: DMatrix::identity(d, d),
        delta: 1.0,
    };
    let run = |n: usize, h: f64| -> Result<Vec<(f64, FlatState)>> {
        let mut out = Vec::with_capacity(n);
        let mut st = FlatState {
            pos: init.pos.clone(),
            q: init.q,
            b: init.b.clone(),
            delta: init.delta,
        };
        for k in 0..n {
            let t = s + k as f64 * h;
            st = rk4_step(family, t, &st, h)?;
            out.push((
                s + (k + 1) as f64 * h,
                FlatState {
                    pos: st.pos.clone(),
                    q: st.q,
                    b: st.b.clone(),
                    delta: st.delta,
                },
            ));
        }
        Ok(out)
    };
    let back = run(n_back, -opts.dt)?;
    let fwd = run(n_fwd, opts.dt)?;
    let mut flat: Vec<(f64, FlatState)> = back.into_iter().rev().collect();
    flat.push((s, init));
    flat.extend(fwd);
    let mut states = Vec::with_capacity(flat.len());
    for (t, st) in flat {
        if let Some(gap) = family.contact_gap(t, st.pos.as_slice()) {
            if gap.abs() > opts.contact_tolerance {
                return Err(HkError::LeftContactSet { t, gap });
            }
        }
        let jet = family.jet(t, st.pos.as_slice())?;
        states.push(CharacteristicState {
            t,
            position: st.pos.as_slice().to_vec(),
            q: st.q,
            b: st.b,
            delta: st.delta,
            jet,
        });
    }
    let residuals = flow_residuals(&states, opts.dt);
    Ok(Trajectory {
        s,
        dt: opts.dt,
        states,
        residuals,
    })
}

fn flow_residuals(states: &[CharacteristicState], dt: f64) -> FlowResiduals {
    let mut r = FlowResiduals::default();
    let h2 = dt * dt;
    for st in states {
        let det = st.b.clone().determinant();
        r.determinant_consistency = r.determinant_consistency.max((st.delta - det).abs());
    }
    for w in states.windows(3) {
        let (a, m, b) = (&w[0], &w[1], &w[2]);
        let j = &m.jet;
        let g2 = j.grad.norm_squared();
        let tr = j.hess.trace();
        let pa = DVector::from_column_slice(&a.position);
        let pm = DVector::from_column_slice(&m.position);
        let pb = DVector::from_column_slice(&b.position);
        let tdd = (&pa - &pm * 2.0 + &pb) / h2;
        r.position = r.position.max((tdd + &j.grad * (4.0 * j.value)).norm());
        let qdd = (a.q - 2.0 * m.q + b.q) / h2;
        r.dilation = r.dilation.max((qdd - g2 * m.q).abs());
        let bdd = (&a.b - &m.b * 2.0 + &b.b) / h2;
        let target = -(&j.grad * j.grad.transpose() + &j.hess * j.value) * &m.b * 4.0;
        r.jacobian = r.jacobian.max((bdd - target).norm());
        let ddd = (a.delta - 2.0 * m.delta + b.delta) / h2;
        let want = m.delta * (tr * tr - j.hess.norm_squared() - 4.0 * g2 - 4.0 * j.value * tr);
        r.determinant = r.determinant.max((ddd - want).abs());
    }
    r
}

/// Second logarithmic derivatives of `gamma = q` and `rho = q delta^{1/d}`
/// at one interior trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureSample {
    pub t: f64,
    pub gamma_fd: f64,
    pub rho_fd: f64,
    /// `|grad xi|^2`
    pub gamma_closed: f64,
    /// `((Δ xi)^2 - d |D^2 xi|^2) / d^2 + (1 - 4/d) |grad xi|^2`
    pub rho_closed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub samples: Vec<CurvatureSample>,
    /// Largest `|fd - closed|` over both quantities.
    pub max_fd_deviation: f64,
    /// Samples violating `gamma''/gamma >= 0` or
    /// `rho''/rho <= (1 - 4/d) gamma''/gamma` in closed form (slack 1e-10 / 1e-8).
    pub closed_violations: usize,
    /// The same inequalities evaluated on the finite differences with the
    /// caller's tolerance.
    pub fd_violations: usize,
}

/// Slack for the closed-form curvature inequalities.
pub const GAMMA_SLACK: f64 = 1e-10;
pub const RHO_SLACK: f64 = 1e-8;

pub fn curvature_diagnostics(traj: &Trajectory, fd_tolerance: f64) -> CurvatureReport {
    let h2 = traj.dt * traj.dt;
    let mut samples = Vec::new();
    let mut dev: f64 = 0.0;
    let (mut closed_v, mut fd_v) = (0, 0);
    for w in traj.states.windows(3) {
        let (a, m, b) = (&w[0], &w[1], &w[2]);
        let d = m.position.len() as f64;
        let rho = |st: &CharacteristicState| st.q * st.delta.abs().powf(1.0 / d);
        let gamma_fd = (a.q - 2.0 * m.q + b.q) / h2 / m.q;
        let rho_fd = (rho(a) - 2.0 * rho(m) + rho(b)) / h2 / rho(m);
        let g2 = m.jet.grad.norm_squared();
        let tr = m.jet.hess.trace();
        let gamma_closed = g2;
        let rho_closed = (tr * tr - d * m.jet.hess.norm_squared()) / (d * d) + (1.0 - 4.0 / d) * g2;
        dev = dev
            .max((gamma_fd - gamma_closed).abs())
            .max((rho_fd - rho_closed).abs());
        if gamma_closed < -GAMMA_SLACK || rho_closed > (1.0 - 4.0 / d) * gamma_closed + RHO_SLACK {
            closed_v += 1;
        }
        if gamma_fd < -fd_tolerance || rho_fd > (1.0 - 4.0 / d) * gamma_fd + fd_tolerance {
            fd_v += 1;
        }
        samples.push(CurvatureSample {
            t: m.t,
            gamma_fd,
            rho_fd,
            gamma_closed,
            rho_closed,
        });
    }
    CurvatureReport {
        samples,
        max_fd_deviation: dev,
        closed_violations: closed_v,
        fd_violations: fd_v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_potentials::AnalyticPotential;
    use proptest::prelude::*;

    fn grid1(lo: f64, hi: f64, n: usize) -> GridSpec {
        GridSpec::uniform_1d(lo, hi, n).unwrap()
    }

    #[test]
    fn constant_initial_values() {
        let g = grid1(-1.0, 1.0, 41);
        for a in [-0.5, -0.2, 0.0, 0.3, 2.0] {
            let xi0 = GridFunction::from_fn(g.clone(), |_| a).unwrap();
            for t in [0.1, 0.5, 1.0] {
                let xt = hopf_lax_forward(&xi0, t).unwrap();
                let want = constant_flow(a, t);
                assert!(xt
                    .values
                    .iter()
                    .all(|v| (v - want).abs() <= 1e-12 || (v.is_infinite() && *v == want)));
            }
            let back = hopf_lax_backward(&GridFunction::from_fn(g.clone(), |_| -a.min(0.5)).unwrap(), 0.25).unwrap();
            let want = -(a.min(0.5)) / (1.0 + 2.0 * a.min(0.5) * 0.75);
            assert!(back.values.iter().all(|v| (v - want).abs() <= 1e-12));
        }
        let zero = GridFunction::from_fn(g.clone(), |_| 0.0).unwrap();
        assert!(hopf_lax_forward(&zero, 0.4).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(hopf_lax_backward(&zero, 0.4).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn infeasible_inputs() {
        let g = grid1(0.0, 1.0, 11);
        let bad = GridFunction::from_fn(g.clone(), |_| -0.6).unwrap();
        assert!(matches!(
            hopf_lax_forward(&bad, 0.5),
            Err(HkError::InfeasiblePotential(_))
        ));
        let bad = GridFunction::from_fn(g, |_| 0.6).unwrap();
        assert!(matches!(
            hopf_lax_backward(&bad, 0.5),
            Err(HkError::InfeasiblePotential(_))
        ));
    }

    #[test]
    fn fixed_point_sets() {
        // xi_0 = -1/2 at a node stays on -1/(2(1-t))
        let g = grid1(-2.0, 2.0, 81);
        let xi0 = GridFunction::from_fn(g.clone(), |x| if x[0].abs() < 1e-12 { -0.5 } else { 0.3 }).unwrap();
        for t in [0.2, 0.6, 0.9] {
            let xt = hopf_lax_forward(&xi0, t).unwrap();
            let p = g.nearest_node(&[0.0]);
            assert_eq!(xt.values[p], -1.0 / (2.0 * (1.0 - t)));
        }
    }

    #[test]
    fn z_factor_examples() {
        assert_eq!(z_factor(0.0, 0.0, 0.7).unwrap(), 1.0);
        assert_eq!(z_factor(f64::INFINITY, 0.2, 0.7).unwrap(), 0.0);
        assert!(z_factor(-1.0, 0.0, 1.0).is_err());
        let a = 0.4;
        let (t0, t1, t2) = (0.1, 0.35, 0.8);
        // flow started at t0 with value a
        let u0 = a;
        let u1 = constant_flow(a, t1 - t0);
        let u2 = constant_flow(a, t2 - t0);
        let whole = z_factor(u0, u2, t2 - t0).unwrap();
        let parts = z_factor(u0, u1, t1 - t0).unwrap() * z_factor(u1, u2, t2 - t1).unwrap();
        assert!((whole - parts).abs() < 1e-14);
        assert!((whole - 1.0 / (1.0 + 2.0 * a * (t2 - t0)).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn two_dirac_grid_matches_closed_form() {
        let fam = TwoDiracFamily::new(vec![0.0], 1.0, vec![0.9], 1.0);
        let g = grid1(-3.0, 6.0, 2001);
        for t in [0.15, 0.35, 0.55] {
            let f = hopf_lax_forward_points(&fam.xi0(), &g, t).unwrap();
            let b = hopf_lax_backward_points(&fam.xibar1(), &g, t).unwrap();
            for (p, x) in g.nodes().iter().enumerate() {
                assert!((f.values[p] - fam.forward_value(t, x)).abs() <= 1e-10);
                assert!((b.values[p] - fam.backward_value(t, x)).abs() <= 1e-10);
                assert!(f.values[p] >= b.values[p] - 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_for_constants_is_exact() {
        let g = grid1(-1.0, 1.0, 21);
        let xi0 = GridFunction::from_fn(g, |_| 0.25).unwrap();
        assert!(semigroup_residual(&xi0, 0.3, 0.8).unwrap() <= 1e-15);
    }

    #[test]
    fn lipschitz_bound_holds() {
        let g = grid1(-2.0, 2.0, 401);
        let xi0 = GridFunction::from_fn(g, |x| 0.3 * (2.0 * x[0]).sin()).unwrap();
        let a = xi0.min_value();
        for t in [0.2, 0.5, 1.0] {
            let xt = hopf_lax_forward(&xi0, t).unwrap();
            assert!(discrete_lipschitz(&xt) <= lipschitz_bound(a, t) * (1.0 + 0.02));
            assert!(xt.values.iter().all(|v| *v >= constant_flow(a, t) - 1e-12));
            assert!(xt
                .values
                .iter()
                .all(|v| *v <= constant_flow(xi0.max_value(), t) + 1e-12));
        }
    }

    #[test]
    fn duality_relation_on_grid_pairs() {
        let g = grid1(-1.0, 1.0, 101);
        let xi0 = GridFunction::from_fn(g.clone(), |x| 0.2 * x[0] * x[0] - 0.1).unwrap();
        let tau = 0.6;
        let xt = forward_operator(&xi0, tau).unwrap();
        let nodes = g.nodes();
        for (i, x) in nodes.iter().enumerate().step_by(7) {
            let mut best = f64::INFINITY;
            for (j, y) in nodes.iter().enumerate() {
                let lhs = (1.0 - 2.0 * tau * xt.values[i]) * (1.0 + 2.0 * tau * xi0.values[j]);
                let r = dist(x, y);
                let c2 = if r >= FRAC_PI_2 { 0.0 } else { r.cos().powi(2) };
                assert!(lhs >= c2 - 1e-12);
                best = best.min(lhs - c2);
            }
            // equality at the grid minimizer
            assert!(best.abs() <= 1e-12);
        }
    }

    #[test]
    fn transport_map_examples() {
        let zero = AnalyticPotential::new(|_| -0.5, |_| vec![0.0]);
        let (t, q) = transport_map(&zero, 0.0, 0.5, &[0.3]).unwrap();
        assert_eq!((t, q), (vec![0.3], 0.5));
        let c = AnalyticPotential::new(|_| 0.2, |_| vec![0.0, 0.0]);
        let (t, q) = transport_map(&c, 0.25, 0.75, &[0.3, 0.1]).unwrap();
        assert_eq!(t, vec![0.3, 0.1]);
        assert!((q - 1.2).abs() < 1e-15);
        assert!(matches!(
            transport_map(&zero, 0.0, 1.0, &[0.0]),
            Err(HkError::VertexRegion { .. })
        ));
    }

    #[test]
    fn smooth_family_reproduces_constant_flow() {
        let fam = SmoothHopfLax::new(2, 0.0, |_| Some(Jet::constant(2, 0.3)));
        let j = fam.jet(0.7, &[0.1, 0.2]).unwrap();
        assert!((j.value - constant_flow(0.3, 0.7)).abs() < 1e-14);
        assert!(j.grad.norm() < 1e-14 && j.hess.norm() < 1e-12);
    }

    #[test]
    fn smooth_family_matches_two_dirac_closed_form() {
        let fam = TwoDiracFamily::new(vec![0.0, 0.0], 1.0, vec![0.6, 0.3], 1.5);
        let s = 0.4;
        let base = fam.clone();
        let smooth = SmoothHopfLax::new(2, s, move |x| base.jet(s, x).ok());
        for t in [0.2, 0.5, 0.8] {
            let x = [0.2, 0.05];
            let a = smooth.jet(t, &x).unwrap();
            let b = fam.jet(t, &x).unwrap();
            assert!((a.value - b.value).abs() < 1e-11, "{t}");
            assert!((&a.grad - &b.grad).norm() < 1e-10);
            assert!((&a.hess - &b.hess).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_flow_is_static() {
        let fam = ConstantFamily { dim: 2, a: 0.0 };
        let tr = characteristic_flow(
            &fam,
            0.5,
            &[0.1, 0.2],
            &FlowOptions {
                dt: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        for st in &tr.states {
            assert_eq!(st.position, vec![0.1, 0.2]);
            assert_eq!(st.q, 1.0);
            assert_eq!(st.delta, 1.0);
        }
        let rep = curvature_diagnostics(&tr, 1e-8);
        assert_eq!(rep.closed_violations + rep.fd_violations, 0);
        assert!(rep.max_fd_deviation < 1e-12);
    }

    #[test]
    fn constant_flow_dilation() {
        let a = 0.3;
        let fam = ConstantFamily { dim: 1, a };
        let tr = characteristic_flow(
            &fam,
            0.0,
            &[0.0],
            &FlowOptions {
                dt: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        for st in &tr.states {
            assert!((st.q - (1.0 + 2.0 * a * st.t)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dirac_characteristic_tracks_the_geodesic() {
        use crate::cone_geometry::{cone_geodesic, ConePoint};
        let (r0, r1) = (1.0, 1.3);
        let fam = TwoDiracFamily::new(vec![0.0], r0, vec![0.9], r1);
        let a = ConePoint::new(vec![0.0], r0).unwrap();
        let b = ConePoint::new(vec![0.9], r1).unwrap();
        let s = 0.5;
        let zs = cone_geodesic(&a, &b, s).unwrap();
        let opts = FlowOptions {
            dt: 1e-3,
            t_start: 0.1,
            t_end: 0.9,
            contact_tolerance: 1e-8,
        };
        let tr = characteristic_flow(&fam, s, &zs.x, &opts).unwrap();
        for st in tr.states.iter().step_by(50) {
            let z = cone_geodesic(&a, &b, st.t).unwrap();
            assert!((st.position[0] - z.x[0]).abs() < 1e-10, "t = {}", st.t);
            // radius scales with q
            assert!((st.q * zs.r - z.r).abs() < 1e-10);
        }
        assert!(tr.residuals.max() < 1e-5, "{:?}", tr.residuals);
    }

    #[test]
    fn saddle_curvature() {
        let alpha = 0.3;
        let fam = SmoothHopfLax::new(2, 0.5, move |x| {
            Some(Jet {
                value: alpha * (x[0] * x[0] - x[1] * x[1]),
                grad: DVector::from_vec(vec![2.0 * alpha * x[0], -2.0 * alpha * x[1]]),
                hess: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0 * alpha, -2.0 * alpha])),
            })
        });
        let opts = FlowOptions {
            dt: 1e-3,
            t_start: 0.45,
            t_end: 0.55,
            contact_tolerance: 1.0,
        };
        let tr = characteristic_flow(&fam, 0.5, &[0.0, 0.0], &opts).unwrap();
        let rep = curvature_diagnostics(&tr, 1e-6);
        let mid = rep.samples.iter().find(|s| (s.t - 0.5).abs() < 1e-9).unwrap();
        assert!((mid.rho_closed + 8.0 * alpha * alpha / 2.0).abs() < 1e-12);
        assert!((mid.rho_fd + 8.0 * alpha * alpha / 2.0).abs() < 1e-6);
        assert_eq!(rep.closed_violations, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn forward_is_monotone_in_time(c in -0.2..0.4f64, amp in 0.0..0.25f64, freq in 0.5..2.0f64) {
            let g = grid1(-2.0, 2.0, 201);
            let xi0 = GridFunction::from_fn(g, move |x| c + amp * (freq * x[0]).sin()).unwrap();
            let a = hopf_lax_forward(&xi0, 0.3).unwrap();
            let b = hopf_lax_forward(&xi0, 0.7).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!(*v <= *u + 1e-12);
            }
        }

        #[test]
        fn forward_dominates_backward(rho in 0.2..1.5f64, r1 in 0.5..2.0f64, t in 0.05..0.95f64) {
            let fam = TwoDiracFamily::new(vec![0.0], 1.0, vec![rho], r1);
            let g = grid1(-2.0, 3.5, 221);
            let f = hopf_lax_forward_points(&fam.xi0(), &g, t).unwrap();
            let b = hopf_lax_backward_points(&fam.xibar1(), &g, t).unwrap();
            for (u, v) in f.values.iter().zip(&b.values) {
                prop_assert!(*u >= *v - 1e-12);
            }
        }
    }
}
