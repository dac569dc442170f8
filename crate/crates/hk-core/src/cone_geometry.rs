//! Cone over R^d: truncated cone metric, cone geodesics, homogeneous
//! projection and dilation-transport maps.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{HkError, Result};
use crate::measures::{coord_key, Atom, DiscreteMeasure};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `cos(min(r, cutoff))`.
pub fn cos_trunc(r: f64, cutoff: f64) -> f64 {
    r.min(cutoff).cos()
}

/// `cos(min(r, pi/2))`, clamped to be exactly zero beyond the threshold.
pub fn cos_half_pi(r: f64) -> f64 {
    if r >= FRAC_PI_2 {
        0.0
    } else {
        r.cos()
    }
}

fn radial_map(v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    scale(v, f(n) / n)
}

/// `arctan(|v|) v / |v|`, zero at the origin.
pub fn arctan_vec(v: &[f64]) -> Vec<f64> {
    radial_map(v, f64::atan)
}

/// `sin(|v|) v / |v|`, zero at the origin.
pub fn sin_vec(v: &[f64]) -> Vec<f64> {
    radial_map(v, f64::sin)
}

/// A point `[x, r]` of the cone. All points with `r = 0` are the vertex.
#[derive(Debug, Clone)]
pub struct ConePoint {
    pub x: Vec<f64>,
    pub r: f64,
}

impl ConePoint {
    pub fn new(x: Vec<f64>, r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(HkError::DomainError(format!(
                "cone radius must be finite and nonnegative, got {r}"
            )));
        }
        Ok(ConePoint { x, r })
    }

    pub fn vertex(dim: usize) -> Self {
        ConePoint {
            x: vec![0.0; dim],
            r: 0.0,
        }
    }

    pub fn is_vertex(&self) -> bool {
        self.r == 0.0
    }
}

impl PartialEq for ConePoint {
    fn eq(&self, other: &Self) -> bool {
        (self.is_vertex() && other.is_vertex()) || (self.r == other.r && self.x == other.x)
    }
}

pub fn cone_distance(a: &ConePoint, b: &ConePoint, cutoff: f64) -> f64 {
    let c = cos_trunc(dist(&a.x, &b.x), cutoff);
    let d2 = a.r * a.r + b.r * b.r - 2.0 * a.r * b.r * c;
    d2.max(0.0).sqrt()
}

/// Point at time `t` on the cone geodesic from `a` to `b`.
pub fn cone_geodesic(a: &ConePoint, b: &ConePoint, t: f64) -> Result<ConePoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HkError::DomainError(format!("geodesic time {t} outside [0, 1]")));
    }
    if a.is_vertex() && b.is_vertex() {
        return Ok(ConePoint::vertex(a.x.len()));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    if a.is_vertex() {
        return Ok(ConePoint {
            x: b.x.clone(),
            r: t * b.r,
        });
    }
    if b.is_vertex() {
        return Ok(ConePoint {
            x: a.x.clone(),
            r: (1.0 - t) * a.r,
        });
    }
    let delta = sub(&b.x, &a.x);
    let sep = norm(&delta);
    if sep >= FRAC_PI_2 {
        return Err(HkError::DegenerateGeodesic { separation: sep });
    }
    let ratio = b.r / a.r;
    let u = ratio * sep.cos() - 1.0;
    let v = scale(&sin_vec(&delta), ratio);
    let base = 1.0 + t * u;
    let vv = dot(&v, &v);
    let r = a.r * (base * base + t * t * vv).sqrt();
    let x = add(&a.x, &arctan_vec(&scale(&v, t / base)));
    Ok(ConePoint { x, r })
}

/// Atom of a measure on the cone.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedAtom {
    pub point: ConePoint,
    pub weight: f64,
}

/// Canonical lift `mu ⊗ δ_1`.
pub fn lift(mu: &DiscreteMeasure) -> Vec<LiftedAtom> {
    mu.atoms()
        .iter()
        .map(|a| LiftedAtom {
            point: ConePoint { x: a.x.clone(), r: 1.0 },
            weight: a.mass,
        })
        .collect()
}

/// `Σ w_i r_i² δ_{x_i}`; vertex atoms vanish and coincident atoms merge.
pub fn homogeneous_projection(dim: usize, lifted: &[LiftedAtom]) -> Result<DiscreteMeasure> {
    let atoms = lifted
        .iter()
        .filter(|l| !l.point.is_vertex())
        .map(|l| Atom::new(l.point.x.clone(), l.weight * l.point.r * l.point.r))
        .collect();
    Ok(DiscreteMeasure::new(dim, atoms)?.merged())
}

type PairFn = dyn Fn(&[f64]) -> Option<(Vec<f64>, f64)> + Send + Sync;

/// A transport map `T` with a dilation `q ≥ 0`, possibly defined only on
/// part of space. Evaluation returns `None` outside the domain.
#[derive(Clone)]
pub struct DilationTransportPair {
    map: Arc<PairFn>,
}

impl std::fmt::Debug for DilationTransportPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DilationTransportPair")
    }
}

impl DilationTransportPair {
    pub fn new(map: impl Fn(&[f64]) -> Option<(Vec<f64>, f64)> + Send + Sync + 'static) -> Self {
        DilationTransportPair { map: Arc::new(map) }
    }

    /// Total pair built from separate `T` and `q`.
    pub fn from_fns(
        t: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        q: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DilationTransportPair::new(move |x| Some((t(x), q(x))))
    }

    pub fn identity() -> Self {
        DilationTransportPair::new(|x| Some((x.to_vec(), 1.0)))
    }

    pub fn constant_dilation(q: f64) -> Self {
        DilationTransportPair::new(move |x| Some((x.to_vec(), q)))
    }

    pub fn translation(shift: Vec<f64>) -> Self {
        DilationTransportPair::new(move |x| Some((add(x, &shift), 1.0)))
    }

    /// Pair defined on finitely many points by exact coordinate lookup.
    pub fn from_table(rows: Vec<(Vec<f64>, Vec<f64>, f64)>) -> Self {
        let table: std::collections::HashMap<Vec<u64>, (Vec<f64>, f64)> =
            rows.into_iter().map(|(x, y, q)| (coord_key(&x), (y, q))).collect();
        DilationTransportPair::new(move |x| table.get(&coord_key(x)).cloned())
    }

    pub fn eval(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        (self.map)(x)
    }

    fn eval_checked(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (y, q) = self
            .eval(x)
            .ok_or_else(|| HkError::DomainError(format!("dilation-transport pair undefined at {x:?}")))?;
        if !(q >= 0.0) || !q.is_finite() {
            return Err(HkError::DomainError(format!(
                "dilation must be finite and nonnegative, got {q}"
            )));
        }
        if y.len() != x.len() {
            return Err(HkError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok((y, q))
    }

    /// `(T2 ∘ T1, (q2 ∘ T1) q1)` where `self` is `(T1, q1)`.
    pub fn then(&self, next: &DilationTransportPair) -> DilationTransportPair {
        let first = self.clone();
        let second = next.clone();
        DilationTransportPair::new(move |x| {
            let (y, q1) = first.eval(x)?;
            let (z, q2) = second.eval(&y)?;
            Some((z, q1 * q2))
        })
    }

    /// `T_#(q² ν)`; atoms with `q = 0` are dropped and coincident images merged.
    pub fn apply(&self, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let mut atoms = Vec::with_capacity(nu.len());
        for a in nu.atoms() {
            let (y, q) = self.eval_checked(&a.x)?;
            if q > 0.0 {
                atoms.push(Atom::new(y, q * q * a.mass));
            }
        }
        Ok(DiscreteMeasure::new(nu.dim(), atoms)?.merged())
    }
}

/// `Σ m (1 + q² − 2 q cos_{π/2}|T(x) − x|)`, an upper bound for
/// `HK²(mu0, pair ⋆ mu0)`.
pub fn monge_cost(pair: &DilationTransportPair, mu0: &DiscreteMeasure) -> Result<f64> {
    let mut total = 0.0;
    for a in mu0.atoms() {
        let (y, q) = pair.eval_checked(&a.x)?;
        total += a.mass * (1.0 + q * q - 2.0 * q * cos_half_pi(dist(&y, &a.x)));
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_3, PI};

    fn cp(x: &[f64], r: f64) -> ConePoint {
        ConePoint::new(x.to_vec(), r).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(cone_distance(&cp(&[0.3], 1.0), &cp(&[0.3], 1.0), FRAC_PI_2), 0.0);
        let d = cone_distance(&cp(&[0.0], 1.0), &cp(&[FRAC_PI_3], 1.0), FRAC_PI_2);
        assert!((d - 1.0).abs() < 1e-15);
        let d = cone_distance(&cp(&[0.0], 1.0), &cp(&[2.0], 1.0), FRAC_PI_2);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(cone_distance(&cp(&[0.0], 0.0), &cp(&[5.0], 0.0), PI), 0.0);
    }

    #[test]
    fn vertex_identification() {
        assert_eq!(cp(&[1.0], 0.0), cp(&[-4.0], 0.0));
        assert_ne!(cp(&[1.0], 1.0), cp(&[-4.0], 1.0));
    }

    #[test]
    fn geodesic_examples() {
        let g = cone_geodesic(&ConePoint::vertex(1), &cp(&[0.7], 2.0), 0.5).unwrap();
        assert_eq!(g, cp(&[0.7], 1.0));
        let g = cone_geodesic(&cp(&[0.7], 1.0), &cp(&[0.7], 3.0), 0.5).unwrap();
        assert_eq!(g.x, vec![0.7]);
        assert!((g.r - 2.0).abs() < 1e-15);
        let g = cone_geodesic(&cp(&[0.7], 2.0), &ConePoint::vertex(1), 0.25).unwrap();
        assert_eq!(g, cp(&[0.7], 1.5));
    }

    #[test]
    fn geodesic_midpoint_at_third_pi() {
        let a = cp(&[0.0, 0.0], 1.0);
        let b = cp(&[FRAC_PI_3, 0.0], 1.0);
        let m = cone_geodesic(&a, &b, 0.5).unwrap();
        let (u, v) = (FRAC_PI_3.cos() - 1.0, FRAC_PI_3.sin());
        let r = ((1.0 + u / 2.0).powi(2) + v * v / 4.0).sqrt();
        assert!((m.r - r).abs() < 1e-15);
        let full = cone_distance(&a, &b, PI);
        assert!((cone_distance(&a, &m, PI) - 0.5 * full).abs() < 1e-12);
        assert!((cone_distance(&m, &b, PI) - 0.5 * full).abs() < 1e-12);
    }

    #[test]
    fn far_pairs_are_rejected() {
        let e = cone_geodesic(&cp(&[0.0], 1.0), &cp(&[FRAC_PI_2], 1.0), 0.5);
        assert!(matches!(e, Err(HkError::DegenerateGeodesic { .. })));
    }

    #[test]
    fn projection_examples() {
        let l = vec![LiftedAtom {
            point: cp(&[0.1], 2.0),
            weight: 1.0,
        }];
        let p = homogeneous_projection(1, &l).unwrap();
        assert_eq!(p.atoms(), &[Atom::new(vec![0.1], 4.0)]);
        let l = vec![LiftedAtom {
            point: ConePoint::vertex(1),
            weight: 5.0,
        }];
        assert!(homogeneous_projection(1, &l).unwrap().is_empty());
        let l = vec![
            LiftedAtom {
                point: cp(&[0.1], 1.0),
                weight: 1.0,
            },
            LiftedAtom {
                point: cp(&[0.1], 1.0),
                weight: 1.0,
            },
        ];
        assert_eq!(
            homogeneous_projection(1, &l).unwrap().atoms(),
            &[Atom::new(vec![0.1], 2.0)]
        );
    }

    #[test]
    fn dilation_examples() {
        let nu = DiscreteMeasure::new(1, vec![Atom::new(vec![0.0], 1.0), Atom::new(vec![1.0], 2.0)]).unwrap();
        assert_eq!(DilationTransportPair::identity().apply(&nu).unwrap(), nu);
        let quad = DilationTransportPair::constant_dilation(2.0).apply(&nu).unwrap();
        assert_eq!(quad.atoms()[1].mass, 8.0);
        let shift = DilationTransportPair::translation(vec![FRAC_PI_3]);
        let mu0 = DiscreteMeasure::dirac(vec![0.0], 1.0).unwrap();
        assert!((monge_cost(&shift, &mu0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(monge_cost(&DilationTransportPair::identity(), &nu).unwrap(), 0.0);
    }

    #[test]
    fn undefined_pair_is_an_error() {
        let table = DilationTransportPair::from_table(vec![(vec![0.0], vec![1.0], 1.0)]);
        let nu = DiscreteMeasure::dirac(vec![0.5], 1.0).unwrap();
        assert!(table.apply(&nu).is_err());
    }

    #[test]
    fn composition_on_dyadic_inputs() {
        let p1 = DilationTransportPair::from_fns(|x| vec![x[0] + 0.5], |x| 1.0 + x[0].abs());
        let p2 = DilationTransportPair::from_fns(|x| vec![2.0 * x[0]], |_| 0.5);
        let nu = DiscreteMeasure::new(1, vec![Atom::new(vec![0.25], 1.0), Atom::new(vec![-1.0], 0.5)]).unwrap();
        let a = p2.apply(&p1.apply(&nu).unwrap()).unwrap();
        let b = p1.then(&p2).apply(&nu).unwrap();
        assert_eq!(a, b);
    }

    fn arb_point(dim: usize) -> impl Strategy<Value = ConePoint> {
        (
            prop::collection::vec(-2.0..2.0f64, dim),
            prop_oneof![Just(0.0), 0.0..3.0f64],
        )
            .prop_map(|(x, r)| ConePoint { x, r })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_point(2), b in arb_point(2), c in arb_point(2)) {
            for cutoff in [FRAC_PI_2, PI] {
                let ab = cone_distance(&a, &b, cutoff);
                prop_assert!((ab - cone_distance(&b, &a, cutoff)).abs() <= 1e-14);
                prop_assert!(ab >= 0.0);
                prop_assert!(cone_distance(&a, &a, cutoff) <= 1e-7);
                let ac = cone_distance(&a, &c, cutoff);
                let cb = cone_distance(&c, &b, cutoff);
                prop_assert!(ab <= ac + cb + 1e-12);
            }
        }

        #[test]
        fn constant_speed(
            x0 in prop::collection::vec(-1.0..1.0f64, 2),
            dir in prop::collection::vec(-1.0..1.0f64, 2),
            len in 0.0..1.5f64,
            r0 in 0.1..3.0f64, r1 in 0.1..3.0f64,
            s in 0.0..1.0f64, t in 0.0..1.0f64,
        ) {
            let n = norm(&dir);
            prop_assume!(n > 1e-3);
            let x1 = add(&x0, &scale(&dir, len / n));
            let a = cp(&x0, r0);
            let b = cp(&x1, r1);
            let full = cone_distance(&a, &b, PI);
            let gs = cone_geodesic(&a, &b, s).unwrap();
            let gt = cone_geodesic(&a, &b, t).unwrap();
            prop_assert!((cone_distance(&gs, &gt, PI) - (t - s).abs() * full).abs() <= 1e-12 * full.max(1.0));
        }

        #[test]
        fn lift_then_project_is_identity(
            atoms in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 2), 0.01..5.0f64), 1..6)
        ) {
            let mu = DiscreteMeasure::new(2, atoms.into_iter().map(|(x, w)| Atom::new(x, w)).collect()).unwrap().merged();
            prop_assert_eq!(homogeneous_projection(2, &lift(&mu)).unwrap(), mu);
        }

        #[test]
        fn composition_rule(
            a1 in -1.0..1.0f64, a2 in -1.0..1.0f64, b1 in 0.0..2.0f64, b2 in 0.0..2.0f64,
            atoms in prop::collection::vec((-2.0..2.0f64, 0.01..2.0f64), 1..5)
        ) {
            let p1 = DilationTransportPair::from_fns(move |x| vec![x[0] + a1], move |x| b1 + x[0].sin().abs());
            let p2 = DilationTransportPair::from_fns(move |x| vec![0.5 * x[0] + a2], move |_| b2);
            let nu = DiscreteMeasure::new(1, atoms.into_iter().map(|(x, w)| Atom::new(vec![x], w)).collect()).unwrap();
            let a = p2.apply(&p1.apply(&nu).unwrap()).unwrap();
            let b = p1.then(&p2).apply(&nu).unwrap();
            prop_assert!(a.tv_distance(&b).unwrap() <= 1e-12 * nu.total_mass().max(1.0));
        }
    }
}
