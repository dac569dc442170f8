//! Optimal dual potentials, L-transforms on finite point sets, tightness
//! checks and the Monge map induced by a potential.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cone_geometry::{dist, DilationTransportPair};
use crate::error::{HkError, Result};
use crate::let_solver::{optimality_certificate, TransportPlan};
use crate::measures::{check_dims, DiscreteMeasure, GridFunction};

/// `L_1(z) = -log cos |z|` for `|z| < pi/2`, `+inf` otherwise.
pub fn l1(r: f64) -> f64 {
    if r >= FRAC_PI_2 {
        f64::INFINITY
    } else {
        -r.cos().ln()
    }
}

/// `G_tau(phi) = (1 - e^{-2 tau phi}) / (2 tau)`, with `G(+inf) = 1/(2 tau)`.
pub fn g_tau(phi: f64, tau: f64) -> f64 {
    if phi == f64::INFINITY {
        1.0 / (2.0 * tau)
    } else if phi == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        -(-2.0 * tau * phi).exp_m1() / (2.0 * tau)
    }
}

/// `Ǧ_tau(phi) = (e^{2 tau phi} - 1) / (2 tau)`, with `Ǧ(-inf) = -1/(2 tau)`.
pub fn g_check_tau(phi: f64, tau: f64) -> f64 {
    if phi == f64::NEG_INFINITY {
        -1.0 / (2.0 * tau)
    } else if phi == f64::INFINITY {
        f64::INFINITY
    } else {
        (2.0 * tau * phi).exp_m1() / (2.0 * tau)
    }
}

/// Potentials evaluated on the atoms of `mu0` (`phi0`, `xi0`) and `mu1`
/// (`phi1`, `xi1`). Off the supports the convention is `phi0 = xi0 = +inf`
/// and `phi1 = xi1 = -inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub tau: f64,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub xi0: Vec<f64>,
    pub xi1: Vec<f64>,
}

impl PotentialPair {
    /// `sum xi1 dmu1 - sum xi0 dmu0`, equal to `HK^2 / (2 tau)` at optimality.
    pub fn duality_value(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
        let s1: f64 = self.xi1.iter().zip(mu1.atoms()).map(|(x, a)| x * a.mass).sum();
        let s0: f64 = self.xi0.iter().zip(mu0.atoms()).map(|(x, a)| x * a.mass).sum();
        s1 - s0
    }

    /// Largest violation of `(1 - 2 tau xi1)(1 + 2 tau xi0) >= cos^2` over
    /// atom pairs closer than pi/2.
    pub fn feasibility_violation(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
        let t = self.tau;
        let mut worst: f64 = 0.0;
        for (i, a) in mu0.atoms().iter().enumerate() {
            for (j, b) in mu1.atoms().iter().enumerate() {
                let r = dist(&a.x, &b.x);
                if r < FRAC_PI_2 {
                    let c = r.cos();
                    let lhs = (1.0 - 2.0 * t * self.xi1[j]) * (1.0 + 2.0 * t * self.xi0[i]);
                    worst = worst.max(c * c - lhs);
                }
            }
        }
        worst
    }

    pub fn phi0_function(&self, mu0: &DiscreteMeasure) -> PointFunction {
        PointFunction::from_measure(mu0, self.phi0.clone())
    }

    pub fn phi1_function(&self, mu1: &DiscreteMeasure) -> PointFunction {
        PointFunction::from_measure(mu1, self.phi1.clone())
    }
}

/// Builds the optimal potentials of an optimal plan from its marginal
/// densities. Far atoms get `phi0 = -inf`, `phi1 = +inf`.
pub fn potentials_from_plan(
    plan: &TransportPlan,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    tau: f64,
    tolerance: f64,
) -> Result<PotentialPair> {
    check_dims(mu0, mu1)?;
    if !(tau > 0.0) {
        return Err(HkError::NonpositiveParameter {
            name: "tau",
            value: tau,
        });
    }
    let cert = optimality_certificate(plan, mu0, mu1)?;
    if cert.worst() > tolerance {
        return Err(HkError::NotOptimal {
            violation: cert.worst(),
        });
    }
    let log_or_neg_inf = |s: f64| if s > 0.0 { s.ln() } else { f64::NEG_INFINITY };
    let phi0: Vec<f64> = plan.sigma0.iter().map(|s| log_or_neg_inf(*s) / (2.0 * tau)).collect();
    let phi1: Vec<f64> = plan.sigma1.iter().map(|s| -log_or_neg_inf(*s) / (2.0 * tau)).collect();
    let xi0 = plan.sigma0.iter().map(|s| (s - 1.0) / (2.0 * tau)).collect();
    let xi1 = plan.sigma1.iter().map(|s| (1.0 - s) / (2.0 * tau)).collect();
    Ok(PotentialPair {
        tau,
        phi0,
        phi1,
        xi0,
        xi1,
    })
}

/// Extended-real function given by its values on a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFunction {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl PointFunction {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(HkError::DimensionMismatch {
                expected: points.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(HkError::DomainError("point function contains NaN".into()));
        }
        Ok(PointFunction { points, values })
    }

    pub fn from_measure(mu: &DiscreteMeasure, values: Vec<f64>) -> Self {
        PointFunction {
            points: mu.atoms().iter().map(|a| a.x.clone()).collect(),
            values,
        }
    }

    pub fn from_fn(points: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = points.iter().map(|p| f(p)).collect();
        PointFunction { points, values }
    }
}

/// `inf_{|x1 - x0| < pi/2} phi0(x0) + L_1(x1 - x0)` over the listed points;
/// `+inf` when none lies in the open ball.
pub fn forward_l_transform(phi0: &PointFunction, queries: &[Vec<f64>]) -> Vec<f64> {
    queries
        .par_iter()
        .map(|x1| {
            phi0.points
                .iter()
                .zip(&phi0.values)
                .filter_map(|(x0, v)| {
                    let r = dist(x0, x1);
                    (r < FRAC_PI_2).then(|| v + l1(r))
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `sup_{|x1 - x0| < pi/2} phi1(x1) - L_1(x1 - x0)`; `-inf` on an empty ball.
pub fn backward_l_transform(phi1: &PointFunction, queries: &[Vec<f64>]) -> Vec<f64> {
    queries
        .par_iter()
        .map(|x0| {
            phi1.points
                .iter()
                .zip(&phi1.values)
                .filter_map(|(x1, v)| {
                    let r = dist(x0, x1);
                    (r < FRAC_PI_2).then(|| v - l1(r))
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Difference of two extended reals: zero when both are the same infinity,
/// `+inf` when exactly one is infinite.
fn ext_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if a.is_infinite() || b.is_infinite() {
        f64::INFINITY
    } else {
        (a - b).abs()
    }
}

/// Checks `phi0 = phi1^{<-L}` on the points of `phi0` and
/// `phi1 = phi0^{L->}` on the points of `phi1`. Returns the verdict and the
/// largest pointwise discrepancy.
pub fn check_tightness(phi0: &PointFunction, phi1: &PointFunction, tolerance: f64) -> (bool, f64) {
    let back = backward_l_transform(phi1, &phi0.points);
    let fwd = forward_l_transform(phi0, &phi1.points);
    let gap = back
        .iter()
        .zip(&phi0.values)
        .chain(fwd.iter().zip(&phi1.values))
        .map(|(a, b)| ext_gap(*a, *b))
        .fold(0.0, f64::max);
    (gap <= tolerance, gap)
}

/// Scalar field with value and gradient, defined on part of space.
pub trait PotentialField: Send + Sync {
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
}

impl PotentialField for GridFunction {
    fn value(&self, x: &[f64]) -> Option<f64> {
        self.value_at(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient_at(x)
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Potential given by closed-form value and gradient.
#[derive(Clone)]
pub struct AnalyticPotential {
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl AnalyticPotential {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        AnalyticPotential {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl PotentialField for AnalyticPotential {
    fn value(&self, x: &[f64]) -> Option<f64> {
        Some((self.value)(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some((self.gradient)(x))
    }
}

/// Transport map and dilation induced by `xi0` at one point:
/// `T = x + arctan(grad / (1 + 2 xi0))`, `q^2 = (1 + 2 xi0)^2 + |grad|^2`.
pub fn monge_point(xi: f64, grad: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
    crate::hopf_lax::transport_point(xi, grad, 1.0, x)
}

/// Evaluates the Monge map of `xi0` at the query atoms and returns it as a
/// tabulated dilation-transport pair.
pub fn monge_map_from_potential(xi0: &dyn PotentialField, queries: &[Vec<f64>]) -> Result<DilationTransportPair> {
    let mut rows = Vec::with_capacity(queries.len());
    for x in queries {
        let v = xi0
            .value(x)
            .ok_or_else(|| HkError::DomainError(format!("potential undefined at {x:?}")))?;
        let g = xi0
            .gradient(x)
            .ok_or_else(|| HkError::DomainError(format!("potential gradient undefined at {x:?}")))?;
        let (t, q) = monge_point(v, &g, x)?;
        rows.push((x.clone(), t, q));
    }
    Ok(DilationTransportPair::from_table(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone_geometry::monge_cost;
    use crate::let_solver::{solve_let, SolverOptions};
    use crate::measures::{Atom, GridSpec};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_3, LN_2};

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, atoms.iter().map(|(x, w)| Atom::new(vec![*x], *w)).collect()).unwrap()
    }

    fn pot(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> (PotentialPair, f64) {
        let sol = solve_let(mu0, mu1, &SolverOptions::with_tolerance(1e-11)).unwrap();
        (
            potentials_from_plan(&sol.plan, mu0, mu1, 1.0, 1e-9).unwrap(),
            sol.hk_squared,
        )
    }

    #[test]
    fn g_maps_are_inverse_legendre_pairs() {
        assert_eq!(g_tau(f64::INFINITY, 1.0), 0.5);
        assert_eq!(g_check_tau(f64::NEG_INFINITY, 2.0), -0.25);
        let phi: f64 = 0.3;
        assert!((g_tau(phi, 1.0) - (1.0 - (-2.0 * phi).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_dirac_potentials() {
        let mu0 = m(&[(0.0, 1.0)]);
        let mu1 = m(&[(FRAC_PI_3, 1.0)]);
        let (p, hk2) = pot(&mu0, &mu1);
        assert!((p.phi0[0] + LN_2 / 2.0).abs() < 1e-8);
        assert!((p.phi1[0] - LN_2 / 2.0).abs() < 1e-8);
        assert!((p.duality_value(&mu0, &mu1) - hk2 / 2.0).abs() < 1e-9);
        assert!(p.feasibility_violation(&mu0, &mu1) <= 1e-9);
    }

    #[test]
    fn identical_and_far_potentials() {
        let mu = m(&[(0.4, 1.0)]);
        let (p, _) = pot(&mu, &mu);
        assert!(p.phi0[0].abs() < 1e-8 && p.xi1[0].abs() < 1e-8);
        let mu1 = m(&[(2.5, 3.0)]);
        let (p, _) = pot(&mu, &mu1);
        assert_eq!((p.xi0[0], p.xi1[0]), (-0.5, 0.5));
        assert_eq!((p.phi0[0], p.phi1[0]), (f64::NEG_INFINITY, f64::INFINITY));
        assert!((p.duality_value(&mu, &mu1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_point_transforms() {
        let a0 = 0.7;
        let phi0 = PointFunction::new(vec![vec![0.2]], vec![a0]).unwrap();
        let q = vec![vec![0.2], vec![1.0], vec![0.2 + FRAC_PI_2], vec![3.0]];
        let f = forward_l_transform(&phi0, &q);
        assert_eq!(f[0], a0);
        assert!((f[1] - (a0 - 0.8f64.cos().ln())).abs() < 1e-15);
        assert_eq!(f[2], f64::INFINITY);
        assert_eq!(f[3], f64::INFINITY);
        let b = backward_l_transform(&phi0, &q);
        assert!((b[1] - (a0 + 0.8f64.cos().ln())).abs() < 1e-15);
        assert_eq!(b[3], f64::NEG_INFINITY);
    }

    #[test]
    fn zero_function_on_dense_grid() {
        let pts: Vec<Vec<f64>> = (0..=200).map(|i| vec![-1.0 + 0.01 * i as f64]).collect();
        let zero = PointFunction::from_fn(pts.clone(), |_| 0.0);
        assert!(forward_l_transform(&zero, &pts).iter().all(|v| *v == 0.0));
        assert!(backward_l_transform(&zero, &pts).iter().all(|v| *v == 0.0));
        assert!(check_tightness(&zero, &zero, 1e-15).0);
    }

    fn grid_with(z: f64) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = (0..=400).map(|i| vec![-3.0 + 0.015 * i as f64]).collect();
        pts.push(vec![z]);
        pts
    }

    #[test]
    fn raw_dirac_pair_is_not_tight_but_its_transform_is() {
        let (z0, z1) = (0.0, FRAC_PI_3);
        let pts = grid_with(z0);
        let raw0 = PointFunction::from_fn(pts.clone(), |x| if x[0] == z0 { -LN_2 / 2.0 } else { f64::INFINITY });
        let phi1 = PointFunction::new(vec![vec![z1]], vec![LN_2 / 2.0]).unwrap();
        let (tight, gap) = check_tightness(&raw0, &phi1, 1e-12);
        assert!(!tight && gap.is_infinite());

        let expected = PointFunction::from_fn(pts.clone(), |x| {
            let r = (z1 - x[0]).abs();
            if r < FRAC_PI_2 {
                LN_2 / 2.0 - l1(r)
            } else {
                f64::NEG_INFINITY
            }
        });
        let back = backward_l_transform(&phi1, &pts);
        for (a, b) in back.iter().zip(&expected.values) {
            assert!(ext_gap(*a, *b) < 1e-15);
        }
        let (tight, gap) = check_tightness(&expected, &phi1, 1e-12);
        assert!(tight, "gap {gap}");
    }

    #[test]
    fn monge_map_simple_potentials() {
        let q = vec![vec![0.0], vec![0.5]];
        let zero = AnalyticPotential::new(|_| 0.0, |_| vec![0.0]);
        let pair = monge_map_from_potential(&zero, &q).unwrap();
        assert_eq!(pair.eval(&[0.5]).unwrap(), (vec![0.5], 1.0));
        let c = AnalyticPotential::new(|_| 0.3, |_| vec![0.0]);
        let (_, qq) = monge_map_from_potential(&c, &q).unwrap().eval(&[0.0]).unwrap();
        assert!((qq - 1.6).abs() < 1e-15);
        let g = 0.4;
        let lin = AnalyticPotential::new(move |x| g * x[0], move |_| vec![g]);
        let (t, qq) = monge_map_from_potential(&lin, &q).unwrap().eval(&[0.0]).unwrap();
        assert!((t[0] - g.atan()).abs() < 1e-15);
        assert!((qq * qq - (1.0 + g * g)).abs() < 1e-15);
        let bad = AnalyticPotential::new(|_| -0.6, |_| vec![0.0]);
        assert!(matches!(
            monge_map_from_potential(&bad, &q),
            Err(HkError::VertexRegion { .. })
        ));
    }

    /// The Monge map of a smooth small potential is optimal between `mu0` and
    /// its image, so its cost reproduces the solver's HK^2.
    #[test]
    fn monge_cost_matches_solver() {
        let grid = GridSpec::uniform_1d(0.0, 1.0, 21).unwrap();
        let mu0 = DiscreteMeasure::new(1, grid.nodes().into_iter().map(|x| Atom::new(x, 0.05)).collect()).unwrap();
        let xi = AnalyticPotential::new(|x| 0.1 * x[0].sin(), |x| vec![0.1 * x[0].cos()]);
        let pts: Vec<Vec<f64>> = mu0.atoms().iter().map(|a| a.x.clone()).collect();
        let pair = monge_map_from_potential(&xi, &pts).unwrap();
        let mu1 = pair.apply(&mu0).unwrap();
        let sol = solve_let(&mu0, &mu1, &SolverOptions::with_tolerance(1e-10)).unwrap();
        let cost = monge_cost(&pair, &mu0).unwrap();
        assert!((cost - sol.hk_squared).abs() < 1e-8, "{cost} vs {}", sol.hk_squared);
        // q^2 = sigma0^2 (1 + tan^2 |x - T|)
        for p in &pts {
            let (t, q) = pair.eval(p).unwrap();
            let s0 = 1.0 + 0.2 * p[0].sin();
            let tan = (t[0] - p[0]).tan();
            assert!((q * q - s0 * s0 * (1.0 + tan * tan)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_gradient_monge_map_converges() {
        let mut errs = Vec::new();
        for n in [41, 81, 161] {
            let grid = GridSpec::uniform_1d(-1.0, 2.0, n).unwrap();
            let gf = GridFunction::from_fn(grid, |x| 0.1 * x[0].sin()).unwrap();
            let x = vec![0.5];
            let (t, _) = monge_map_from_potential(&gf, std::slice::from_ref(&x))
                .unwrap()
                .eval(&x)
                .unwrap();
            let exact = 0.5 + (0.1 * 0.5f64.cos() / (1.0 + 0.2 * 0.5f64.sin())).atan();
            errs.push((t[0] - exact).abs());
        }
        assert!(errs[2] < errs[0] / 4.0, "{errs:?}");
    }

    proptest! {
        #[test]
        fn triple_transform_identity(
            a in prop::collection::vec((-2.0..2.0f64, -1.0..1.0f64), 1..8),
            b in prop::collection::vec(-2.0..2.0f64, 1..8),
        ) {
            let phi0 = PointFunction::new(a.iter().map(|p| vec![p.0]).collect(), a.iter().map(|p| p.1).collect()).unwrap();
            let bp: Vec<Vec<f64>> = b.iter().map(|x| vec![*x]).collect();
            let f = forward_l_transform(&phi0, &bp);
            let back = backward_l_transform(&PointFunction::new(bp.clone(), f.clone()).unwrap(), &phi0.points);
            let f3 = forward_l_transform(&PointFunction::new(phi0.points.clone(), back.clone()).unwrap(), &bp);
            for (x, y) in f.iter().zip(&f3) {
                prop_assert!(ext_gap(*x, *y) <= 1e-13);
            }
            // order: phi0^{L-><-} <= phi0 on the support
            for (x, y) in back.iter().zip(&phi0.values) {
                prop_assert!(*x <= *y + 1e-13);
            }
        }

        #[test]
        fn transforms_bound_feasible_partners(
            a in prop::collection::vec((-2.0..2.0f64, -1.0..1.0f64), 1..6),
            b in prop::collection::vec(-2.0..2.0f64, 1..6),
            slack in prop::collection::vec(0.0..1.0f64, 6),
        ) {
            let phi0 = PointFunction::new(a.iter().map(|p| vec![p.0]).collect(), a.iter().map(|p| p.1).collect()).unwrap();
            let bp: Vec<Vec<f64>> = b.iter().map(|x| vec![*x]).collect();
            let best = forward_l_transform(&phi0, &bp);
            // any phi1 below the forward transform is feasible
            let feasible: Vec<f64> = best.iter().zip(&slack).map(|(v, s)| v - s).collect();
            for (k, x1) in bp.iter().enumerate() {
                for (x0, v0) in phi0.points.iter().zip(&phi0.values) {
                    let r = dist(x0, x1);
                    if r < FRAC_PI_2 {
                        prop_assert!(feasible[k] - v0 <= l1(r) + 1e-13);
                    }
                }
                prop_assert!(feasible[k] <= best[k]);
            }
        }
    }
}
