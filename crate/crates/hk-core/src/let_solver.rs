//! Logarithmic entropy-transport (LET) problem for discrete measures.
//!
//! Minimizes `<c, eta> + KL(eta_0 | mu0) + KL(eta_1 | mu1)` with the cost
//! `c = -log cos^2 |x0 - x1|` below pi/2 and `+inf` beyond. The optimal value
//! is `HK^2(mu0, mu1)`.

use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_geometry::{dist, ConePoint};
use crate::error::{HkError, Result};
use crate::measures::{check_dims, rescale_to_canonical, DiscreteMeasure};

/// Maximum atoms per side accepted by [`brute_force_let`].
pub const BRUTE_FORCE_MAX_ATOMS: usize = 4;

/// Sweeps without gap progress after which polishing stops once the
/// certificate is within tolerance.
const STALL_SWEEPS: usize = 20;

/// `F(s) = s log s - s + 1` with `F(0) = 1`.
pub fn entropy_f(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        s * s.ln() - s + 1.0
    }
}

/// `-log cos^2 r` for `r < pi/2`, `+inf` otherwise.
pub fn let_cost(r: f64) -> f64 {
    if r >= FRAC_PI_2 {
        f64::INFINITY
    } else {
        -2.0 * r.cos().ln()
    }
}

fn cos2(r: f64) -> f64 {
    if r >= FRAC_PI_2 {
        0.0
    } else {
        let c = r.cos();
        c * c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Discrete plan between the atoms of `mu0` and `mu1` with marginal densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
}

impl TransportPlan {
    pub fn empty(n0: usize, n1: usize) -> Self {
        TransportPlan {
            entries: Vec::new(),
            sigma0: vec![0.0; n0],
            sigma1: vec![0.0; n1],
        }
    }

    /// Builds a plan from entries, computing the marginal densities.
    pub fn from_entries(entries: Vec<PlanEntry>, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<Self> {
        let (m0, m1) = marginals(&entries, mu0.len(), mu1.len())?;
        let sigma0 = m0.iter().zip(mu0.atoms()).map(|(m, a)| m / a.mass).collect();
        let sigma1 = m1.iter().zip(mu1.atoms()).map(|(m, a)| m / a.mass).collect();
        Ok(TransportPlan {
            entries,
            sigma0,
            sigma1,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

fn marginals(entries: &[PlanEntry], n0: usize, n1: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut m0 = vec![0.0; n0];
    let mut m1 = vec![0.0; n1];
    for e in entries {
        if e.source >= n0 || e.target >= n1 {
            return Err(HkError::IndexOutOfRange(format!(
                "plan entry ({}, {}) for measures with {} and {} atoms",
                e.source, e.target, n0, n1
            )));
        }
        if !(e.weight >= 0.0) || !e.weight.is_finite() {
            return Err(HkError::InvalidMeasure(format!(
                "plan weight {} is not a finite nonnegative number",
                e.weight
            )));
        }
        m0[e.source] += e.weight;
        m1[e.target] += e.weight;
    }
    Ok((m0, m1))
}

/// Worst violations of the optimality conditions for a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    /// `max |sigma0 sigma1 - cos^2|` over positive-weight entries.
    pub max_complementarity_violation: f64,
    /// `max (cos^2 - sigma0 sigma1)^+` over all pairs closer than pi/2.
    pub max_feasibility_violation: f64,
    /// Primal objective minus the best dual value built from the plan.
    pub duality_gap: f64,
}

impl OptimalityCertificate {
    pub fn worst(&self) -> f64 {
        self.max_complementarity_violation
            .max(self.max_feasibility_violation)
            .max(self.duality_gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on duality gap, complementarity and feasibility.
    pub tolerance: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_factor: f64,
    pub inner_iterations: usize,
    pub max_polish_sweeps: usize,
    /// Seeds the sweep order of the coordinate-descent polish.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            eps_start: 1.0,
            eps_end: 1e-4,
            eps_factor: 0.5,
            inner_iterations: 200,
            max_polish_sweeps: 200_000,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SolverOptions {
            tolerance,
            ..SolverOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("eps_start", self.eps_start),
            ("eps_end", self.eps_end),
        ] {
            if !(v > 0.0) {
                return Err(HkError::NonpositiveParameter { name, value: v });
            }
        }
        if !(self.eps_factor > 0.0 && self.eps_factor < 1.0) {
            return Err(HkError::DomainError(format!(
                "eps_factor must lie in (0, 1), got {}",
                self.eps_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetSolution {
    pub hk_squared: f64,
    pub plan: TransportPlan,
    pub certificate: OptimalityCertificate,
    pub polish_sweeps: usize,
}

/// LET objective of a plan; marginals are recomputed from the entries.
pub fn let_objective(plan: &TransportPlan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    check_dims(mu0, mu1)?;
    let (m0, m1) = marginals(&plan.entries, mu0.len(), mu1.len())?;
    let mut total = 0.0;
    for e in &plan.entries {
        if e.weight > 0.0 {
            let r = dist(&mu0.atoms()[e.source].x, &mu1.atoms()[e.target].x);
            let c = let_cost(r);
            if c.is_infinite() {
                return Ok(f64::INFINITY);
            }
            total += c * e.weight;
        }
    }
    for (m, a) in m0.iter().zip(mu0.atoms()) {
        total += a.mass * entropy_f(m / a.mass);
    }
    for (m, a) in m1.iter().zip(mu1.atoms()) {
        total += a.mass * entropy_f(m / a.mass);
    }
    Ok(total)
}

/// Dual value `sum mu0 (1 - e^{-f}) + sum mu1 (1 - e^{-g})`.
fn dual_value(f: &[f64], g: &[f64], mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
    let side = |p: &[f64], mu: &DiscreteMeasure| -> f64 {
        p.iter()
            .zip(mu.atoms())
            .map(|(v, a)| a.mass * (1.0 - (-v).exp()))
            .sum::<f64>()
    };
    side(f, mu0) + side(g, mu1)
}

fn neg_log(s: f64) -> f64 {
    if s > 0.0 {
        -s.ln()
    } else {
        f64::INFINITY
    }
}

/// c-transform `f_i = min_j (c_ij - g_j)` over finite-cost pairs.
fn c_transform(cost: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    cost.iter()
        .map(|row| {
            row.iter()
                .zip(g)
                .filter(|(c, _)| c.is_finite())
                .map(|(c, gj)| c - gj)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn transpose(m: &[Vec<f64>], cols: usize) -> Vec<Vec<f64>> {
    (0..cols).map(|j| m.iter().map(|row| row[j]).collect()).collect()
}

/// Best certified dual value obtainable from the plan's marginal densities.
pub fn certified_dual_value(plan: &TransportPlan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    check_dims(mu0, mu1)?;
    let cost: Vec<Vec<f64>> = mu0
        .atoms()
        .iter()
        .map(|a| mu1.atoms().iter().map(|b| let_cost(dist(&a.x, &b.x))).collect())
        .collect();
    let cost_t = transpose(&cost, mu1.len());
    let g: Vec<f64> = plan.sigma1.iter().map(|s| neg_log(*s)).collect();
    let f = c_transform(&cost, &g);
    let d1 = dual_value(&f, &g, mu0, mu1);
    let f2: Vec<f64> = plan.sigma0.iter().map(|s| neg_log(*s)).collect();
    let g2 = c_transform(&cost_t, &f2);
    let d2 = dual_value(&f2, &g2, mu0, mu1);
    Ok(d1.max(d2))
}

pub fn optimality_certificate(
    plan: &TransportPlan,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
) -> Result<OptimalityCertificate> {
    check_dims(mu0, mu1)?;
    if plan.sigma0.len() != mu0.len() || plan.sigma1.len() != mu1.len() {
        return Err(HkError::IndexOutOfRange(
            "marginal density length does not match measure".into(),
        ));
    }
    let mut comp: f64 = 0.0;
    for e in &plan.entries {
        if e.weight > 0.0 {
            let c2 = cos2(dist(&mu0.atoms()[e.source].x, &mu1.atoms()[e.target].x));
            comp = comp.max((plan.sigma0[e.source] * plan.sigma1[e.target] - c2).abs());
        }
    }
    let mut feas: f64 = 0.0;
    for (i, a) in mu0.atoms().iter().enumerate() {
        for (j, b) in mu1.atoms().iter().enumerate() {
            let c2 = cos2(dist(&a.x, &b.x));
            if c2 > 0.0 {
                feas = feas.max(c2 - plan.sigma0[i] * plan.sigma1[j]);
            }
        }
    }
    let primal = let_objective(plan, mu0, mu1)?;
    let dual = certified_dual_value(plan, mu0, mu1)?;
    let gap = if primal.is_infinite() {
        f64::INFINITY
    } else {
        (primal - dual).max(0.0)
    };
    Ok(OptimalityCertificate {
        max_complementarity_violation: comp,
        max_feasibility_violation: feas,
        duality_gap: gap,
    })
}

struct Edge {
    i: usize,
    j: usize,
    cost: f64,
    /// `mu0_i mu1_j cos^2`.
    p: f64,
}

fn build_edges(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Vec<Edge> {
    let rows: Vec<Vec<Edge>> = mu0
        .atoms()
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            mu1.atoms()
                .iter()
                .enumerate()
                .filter_map(|(j, b)| {
                    let r = dist(&a.x, &b.x);
                    (r < FRAC_PI_2).then(|| Edge {
                        i,
                        j,
                        cost: let_cost(r),
                        p: a.mass * b.mass * cos2(r),
                    })
                })
                .collect()
        })
        .collect();
    rows.into_iter().flatten().collect()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Log-domain scaling iterations for the entropic problem with geometric
/// annealing of the regularization. Returns initial plan weights per edge.
fn entropic_warm_start(edges: &[Edge], mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &SolverOptions) -> Vec<f64> {
    let n0 = mu0.len();
    let n1 = mu1.len();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n0];
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n1];
    for (k, e) in edges.iter().enumerate() {
        rows[e.i].push(k);
        cols[e.j].push(k);
    }
    let lm0: Vec<f64> = mu0.atoms().iter().map(|a| a.mass.ln()).collect();
    let lm1: Vec<f64> = mu1.atoms().iter().map(|a| a.mass.ln()).collect();
    let mut f = vec![0.0; n0];
    let mut g = vec![0.0; n1];
    let mut eps = opts.eps_start;
    loop {
        let damp = eps / (1.0 + eps);
        for _ in 0..opts.inner_iterations {
            f = rows
                .par_iter()
                .map(|row| {
                    if row.is_empty() {
                        return f64::INFINITY;
                    }
                    -damp
                        * log_sum_exp(
                            row.iter()
                                .map(|&k| lm1[edges[k].j] + (g[edges[k].j] - edges[k].cost) / eps),
                        )
                })
                .collect();
            g = cols
                .par_iter()
                .map(|col| {
                    if col.is_empty() {
                        return f64::INFINITY;
                    }
                    -damp
                        * log_sum_exp(
                            col.iter()
                                .map(|&k| lm0[edges[k].i] + (f[edges[k].i] - edges[k].cost) / eps),
                        )
                })
                .collect();
        }
        if eps <= opts.eps_end {
            break;
        }
        eps = (eps * opts.eps_factor).max(opts.eps_end);
    }
    edges
        .iter()
        .map(|e| {
            let w = mu0.atoms()[e.i].mass * mu1.atoms()[e.j].mass * ((f[e.i] + g[e.j] - e.cost) / eps).exp();
            if w.is_finite() {
                w
            } else {
                0.0
            }
        })
        .collect()
}

/// Exact minimizer in `w` of the objective with all other weights fixed:
/// the nonnegative root of `(R + w)(C + w) = P`.
fn cd_update(r: f64, c: f64, p: f64) -> f64 {
    let num = 2.0 * (p - r * c);
    if num <= 0.0 {
        return 0.0;
    }
    num / ((r + c) + ((r - c) * (r - c) + 4.0 * p).sqrt())
}

/// Cancels improving 2x2 exchanges `(i,j),(k,l) -> (i,l),(k,j)`. These keep
/// both marginals fixed, so the objective is linear along them and the exact
/// step drives one weight to zero. Coordinate descent alone moves along such
/// directions very slowly when atoms nearly coincide.
fn cancel_cycles(edges: &[Edge], w: &mut [f64], index: &[Option<usize>], n1: usize) {
    let support: Vec<usize> = (0..edges.len()).filter(|&k| w[k] > 0.0).collect();
    for (pos, &a) in support.iter().enumerate() {
        for &b in &support[pos + 1..] {
            let (ea, eb) = (&edges[a], &edges[b]);
            if ea.i == eb.i || ea.j == eb.j || w[a] <= 0.0 || w[b] <= 0.0 {
                continue;
            }
            let (Some(c), Some(d)) = (index[ea.i * n1 + eb.j], index[eb.i * n1 + ea.j]) else {
                continue;
            };
            let reduced = ea.cost + eb.cost - edges[c].cost - edges[d].cost;
            let scale = 1.0 + ea.cost.abs() + eb.cost.abs() + edges[c].cost.abs() + edges[d].cost.abs();
            if reduced <= 1e-14 * scale {
                continue;
            }
            let delta = w[a].min(w[b]);
            w[a] -= delta;
            w[b] -= delta;
            w[c] += delta;
            w[d] += delta;
        }
    }
}

fn plan_from_weights(edges: &[Edge], w: &[f64], mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> TransportPlan {
    let entries: Vec<PlanEntry> = edges
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(e, w)| PlanEntry {
            source: e.i,
            target: e.j,
            weight: *w,
        })
        .collect();
    TransportPlan::from_entries(entries, mu0, mu1).expect("edge indices are valid")
}

fn empty_side_solution(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> LetSolution {
    LetSolution {
        hk_squared: mu0.total_mass() + mu1.total_mass(),
        plan: TransportPlan::empty(mu0.len(), mu1.len()),
        certificate: OptimalityCertificate {
            max_complementarity_violation: 0.0,
            max_feasibility_violation: 0.0,
            duality_gap: 0.0,
        },
        polish_sweeps: 0,
    }
}

/// Solves the LET problem: entropic warm start followed by exact
/// coordinate-descent polishing until the certificate is within tolerance.
pub fn solve_let(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &SolverOptions) -> Result<LetSolution> {
    check_dims(mu0, mu1)?;
    opts.validate()?;
    if mu0.is_empty() || mu1.is_empty() {
        return Ok(empty_side_solution(mu0, mu1));
    }
    let edges = build_edges(mu0, mu1);
    if edges.is_empty() {
        return Ok(empty_side_solution(mu0, mu1));
    }
    let mut w = entropic_warm_start(&edges, mu0, mu1, opts);
    let n1 = mu1.len();
    let mut index = vec![None; mu0.len() * n1];
    for (k, e) in edges.iter().enumerate() {
        index[e.i * n1 + e.j] = Some(k);
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut row = vec![0.0; mu0.len()];
    let mut col = vec![0.0; mu1.len()];
    // The objective is strongly convex in the marginals, so a gap of `g`
    // pins each density to about sqrt(2 g / mass). Polish past the reported
    // tolerance until the densities are stable to it, or until the gap stops
    // improving at rounding level.
    let min_mass = mu0
        .atoms()
        .iter()
        .chain(mu1.atoms())
        .map(|a| a.mass)
        .fold(f64::INFINITY, f64::min);
    let scale = mu0.total_mass() + mu1.total_mass();
    let gap_target = (0.5 * opts.tolerance * opts.tolerance * min_mass).max(1e-13 * scale);
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0usize;
    let mut last = f64::INFINITY;
    for sweep in 0..=opts.max_polish_sweeps {
        let plan = plan_from_weights(&edges, &w, mu0, mu1);
        let cert = optimality_certificate(&plan, mu0, mu1)?;
        last = cert.worst();
        if cert.duality_gap < 0.99 * best_gap {
            best_gap = cert.duality_gap;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if last <= opts.tolerance && (cert.duality_gap <= gap_target || stalled >= STALL_SWEEPS) {
            return Ok(LetSolution {
                hk_squared: let_objective(&plan, mu0, mu1)?,
                plan,
                certificate: cert,
                polish_sweeps: sweep,
            });
        }
        if sweep == opts.max_polish_sweeps {
            break;
        }
        cancel_cycles(&edges, &mut w, &index, n1);
        row.iter_mut().for_each(|v| *v = 0.0);
        col.iter_mut().for_each(|v| *v = 0.0);
        for (e, wk) in edges.iter().zip(&w) {
            row[e.i] += wk;
            col[e.j] += wk;
        }
        order.shuffle(&mut rng);
        for &k in &order {
            let e = &edges[k];
            let r = (row[e.i] - w[k]).max(0.0);
            let c = (col[e.j] - w[k]).max(0.0);
            let nw = cd_update(r, c, e.p);
            row[e.i] = r + nw;
            col[e.j] = c + nw;
            w[k] = nw;
        }
    }
    Err(HkError::NoConvergence {
        iterations: opts.max_polish_sweeps,
        residual: last,
    })
}

/// Minimizer of a strictly convex function on `[0, inf)` given its
/// increasing derivative, by bracketing and bisection to width `resolution`.
fn minimize_1d(deriv: impl Fn(f64) -> f64, resolution: f64) -> f64 {
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Reference LET value for tiny instances by coordinate-wise 1-D
/// minimization of the objective over every plan weight.
///
/// `resolution` is the bracketing width of each 1-D solve and the stopping
/// threshold on the largest weight change in a sweep.
pub fn brute_force_let(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, resolution: f64) -> Result<f64> {
    check_dims(mu0, mu1)?;
    if mu0.len() > BRUTE_FORCE_MAX_ATOMS || mu1.len() > BRUTE_FORCE_MAX_ATOMS {
        return Err(HkError::TooLarge(format!(
            "brute force accepts at most {BRUTE_FORCE_MAX_ATOMS} atoms per side, got {} and {}",
            mu0.len(),
            mu1.len()
        )));
    }
    if !(resolution > 0.0) {
        return Err(HkError::NonpositiveParameter {
            name: "grid_resolution",
            value: resolution,
        });
    }
    let n0 = mu0.len();
    let n1 = mu1.len();
    let mut w = vec![vec![0.0; n1]; n0];
    let cost: Vec<Vec<f64>> = mu0
        .atoms()
        .iter()
        .map(|a| mu1.atoms().iter().map(|b| let_cost(dist(&a.x, &b.x))).collect())
        .collect();
    const MAX_SWEEPS: usize = 1_000_000;
    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        change = 0.0;
        for i in 0..n0 {
            for j in 0..n1 {
                if cost[i][j].is_infinite() {
                    continue;
                }
                let r: f64 = (0..n1).filter(|&k| k != j).map(|k| w[i][k]).sum();
                let c: f64 = (0..n0).filter(|&k| k != i).map(|k| w[k][j]).sum();
                let (m0, m1, cij) = (mu0.atoms()[i].mass, mu1.atoms()[j].mass, cost[i][j]);
                let deriv = |x: f64| ((r + x) / m0).ln() + ((c + x) / m1).ln() + cij;
                let nw = minimize_1d(deriv, resolution);
                change = change.max((nw - w[i][j]).abs());
                w[i][j] = nw;
            }
        }
        if change <= resolution {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(HkError::NoConvergence {
            iterations: MAX_SWEEPS,
            residual: change,
        });
    }
    let entries = (0..n0)
        .flat_map(|i| (0..n1).map(move |j| (i, j)))
        .filter(|&(i, j)| w[i][j] > 0.0)
        .map(|(i, j)| PlanEntry {
            source: i,
            target: j,
            weight: w[i][j],
        })
        .collect();
    let plan = TransportPlan::from_entries(entries, mu0, mu1)?;
    let_objective(&plan, mu0, mu1)
}

/// One pair of cone points carrying weight `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPair {
    pub from: ConePoint,
    pub to: ConePoint,
    pub weight: f64,
}

/// Lifts an optimal plan to a plan on the cone whose homogeneous marginals
/// are `mu0` and `mu1`. Mass not carried by the transported pairs is paired
/// with the vertex.
pub fn lift_plan_to_cone(
    plan: &TransportPlan,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    tolerance: f64,
) -> Result<Vec<LiftedPair>> {
    let cert = optimality_certificate(plan, mu0, mu1)?;
    if cert.worst() > tolerance {
        return Err(HkError::NotOptimal {
            violation: cert.worst(),
        });
    }
    let dim = mu0.dim();
    let mut out = Vec::new();
    let mut covered0 = vec![0.0; mu0.len()];
    let mut covered1 = vec![0.0; mu1.len()];
    for e in &plan.entries {
        if e.weight <= 0.0 {
            continue;
        }
        let (s0, s1) = (plan.sigma0[e.source], plan.sigma1[e.target]);
        out.push(LiftedPair {
            from: ConePoint::new(mu0.atoms()[e.source].x.clone(), s0.powf(-0.5))?,
            to: ConePoint::new(mu1.atoms()[e.target].x.clone(), s1.powf(-0.5))?,
            weight: e.weight,
        });
        covered0[e.source] += e.weight / s0;
        covered1[e.target] += e.weight / s1;
    }
    for (a, cov) in mu0.atoms().iter().zip(&covered0) {
        let rest = a.mass - cov;
        if rest > tolerance * a.mass {
            out.push(LiftedPair {
                from: ConePoint::new(a.x.clone(), 1.0)?,
                to: ConePoint::vertex(dim),
                weight: rest,
            });
        }
    }
    for (b, cov) in mu1.atoms().iter().zip(&covered1) {
        let rest = b.mass - cov;
        if rest > tolerance * b.mass {
            out.push(LiftedPair {
                from: ConePoint::vertex(dim),
                to: ConePoint::new(b.x.clone(), 1.0)?,
                weight: rest,
            });
        }
    }
    Ok(out)
}

/// `HK_{alpha,beta}(mu0, mu1)` via rescaling to the canonical problem.
pub fn hk_distance(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    alpha: f64,
    beta: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    let (c0, factor) = rescale_to_canonical(alpha, beta, mu0)?;
    let (c1, _) = rescale_to_canonical(alpha, beta, mu1)?;
    let sol = solve_let(&c0, &c1, opts)?;
    Ok((factor * sol.hk_squared).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone_geometry::homogeneous_projection;
    use crate::cone_geometry::LiftedAtom;
    use crate::measures::Atom;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_3;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, atoms.iter().map(|(x, w)| Atom::new(vec![*x], *w)).collect()).unwrap()
    }

    #[test]
    fn near_coincident_atoms_converge() {
        let atoms = |v: &[([f64; 2], f64)]| {
            DiscreteMeasure::new(2, v.iter().map(|(x, w)| Atom::new(x.to_vec(), *w)).collect()).unwrap()
        };
        let a = atoms(&[
            ([0.3652821100203195, 0.19802308357895673], 1.1282049588159087),
            ([0.33334681246651215, 0.3057809079166156], 1.0663597316767297),
            ([0.36269251590820206, 0.19101226996696963], 0.02206533750624691),
            ([0.6724246031386083, 0.07528592303784348], 1.0561352764921423),
        ]);
        let b = atoms(&[
            ([0.36575996168491165, 0.18945954298814066], 1.1414877558678),
            ([0.3319123962018054, 0.3035726831627661], 1.076395401009333),
            ([0.3655051356312621, 0.18876962538723324], 0.022326770264459502),
            ([0.691291902916396, 0.06716778122876296], 1.0868519554859666),
        ]);
        let opts = SolverOptions {
            max_polish_sweeps: 2000,
            ..SolverOptions::with_tolerance(1e-10)
        };
        let sol = solve_let(&a, &b, &opts).unwrap();
        assert!(sol.certificate.worst() <= 1e-10);
        assert!((sol.hk_squared - brute_force_let(&a, &b, 1e-13).unwrap()).abs() < 1e-9);
    }

    fn tight() -> SolverOptions {
        SolverOptions::with_tolerance(1e-11)
    }

    #[test]
    fn objective_examples() {
        let mu0 = m(&[(0.0, 1.0)]);
        let mu1 = m(&[(FRAC_PI_3, 2.0)]);
        assert_eq!(let_objective(&TransportPlan::empty(1, 1), &mu0, &mu1).unwrap(), 3.0);
        let mu1 = m(&[(FRAC_PI_3, 1.0)]);
        let plan = |th: f64| {
            TransportPlan::from_entries(
                vec![PlanEntry {
                    source: 0,
                    target: 0,
                    weight: th,
                }],
                &mu0,
                &mu1,
            )
            .unwrap()
        };
        assert!((let_objective(&plan(0.5), &mu0, &mu1).unwrap() - 1.0).abs() < 1e-15);
        for th in [0.3, 0.45, 0.55, 0.8] {
            assert!(let_objective(&plan(th), &mu0, &mu1).unwrap() > 1.0);
        }
        let far = m(&[(2.0, 1.0)]);
        let p = TransportPlan::from_entries(
            vec![PlanEntry {
                source: 0,
                target: 0,
                weight: 0.1,
            }],
            &mu0,
            &far,
        )
        .unwrap();
        assert_eq!(let_objective(&p, &mu0, &far).unwrap(), f64::INFINITY);
        let bad = TransportPlan {
            entries: vec![PlanEntry {
                source: 3,
                target: 0,
                weight: 1.0,
            }],
            sigma0: vec![0.0],
            sigma1: vec![0.0],
        };
        assert!(matches!(
            let_objective(&bad, &mu0, &far),
            Err(HkError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mu = m(&[(0.0, 1.0), (0.2, 2.0)]);
        let sol = solve_let(&mu, &mu, &tight()).unwrap();
        assert!(sol.hk_squared.abs() < 1e-10);
        for s in sol.plan.sigma0.iter().chain(&sol.plan.sigma1) {
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn two_diracs_third_pi() {
        let sol = solve_let(&m(&[(0.0, 1.0)]), &m(&[(FRAC_PI_3, 1.0)]), &tight()).unwrap();
        assert!((sol.hk_squared - 1.0).abs() < 1e-10);
        assert!((sol.plan.sigma0[0] - 0.5).abs() < 1e-9);
        assert!((sol.plan.entries[0].weight - 0.5).abs() < 1e-9);
    }

    #[test]
    fn far_diracs_and_empty_measures() {
        let sol = solve_let(&m(&[(0.0, 4.0)]), &m(&[(2.0, 9.0)]), &tight()).unwrap();
        assert_eq!(sol.hk_squared, 13.0);
        assert!(sol.plan.entries.is_empty());
        let sol = solve_let(&DiscreteMeasure::empty(1), &m(&[(2.0, 9.0)]), &tight()).unwrap();
        assert_eq!(sol.hk_squared, 9.0);
    }

    #[test]
    fn brute_force_examples() {
        let v = brute_force_let(&m(&[(0.0, 1.0)]), &m(&[(FRAC_PI_3, 1.0)]), 1e-13).unwrap();
        assert!((v - (2.0 - 2.0 * FRAC_PI_3.cos())).abs() < 1e-8);
        let v = brute_force_let(&m(&[(0.3, 2.0)]), &m(&[(0.3, 2.0)]), 1e-13).unwrap();
        assert!(v.abs() < 1e-10);
        let v = brute_force_let(&m(&[(0.0, 1.0)]), &m(&[(FRAC_PI_2, 2.0)]), 1e-13).unwrap();
        assert_eq!(v, 3.0);
        let five = m(&[(0.0, 1.0), (0.1, 1.0), (0.2, 1.0), (0.3, 1.0), (0.4, 1.0)]);
        assert!(matches!(
            brute_force_let(&five, &five, 1e-10),
            Err(HkError::TooLarge(_))
        ));
    }

    #[test]
    fn lift_examples() {
        let mu0 = m(&[(0.0, 1.0)]);
        let mu1 = m(&[(FRAC_PI_3, 1.0)]);
        let sol = solve_let(&mu0, &mu1, &tight()).unwrap();
        let lifted = lift_plan_to_cone(&sol.plan, &mu0, &mu1, 1e-8).unwrap();
        assert_eq!(lifted.len(), 1);
        assert!((lifted[0].from.r - 2f64.sqrt()).abs() < 1e-8);
        assert!((lifted[0].weight - 0.5).abs() < 1e-9);
        let p0: Vec<LiftedAtom> = lifted
            .iter()
            .map(|l| LiftedAtom {
                point: l.from.clone(),
                weight: l.weight,
            })
            .collect();
        assert!(homogeneous_projection(1, &p0).unwrap().approx_eq(&mu0, 1e-8));

        let far1 = m(&[(3.0, 2.0)]);
        let sol = solve_let(&mu0, &far1, &tight()).unwrap();
        let lifted = lift_plan_to_cone(&sol.plan, &mu0, &far1, 1e-8).unwrap();
        assert_eq!(lifted.len(), 2);
        assert!(lifted[0].to.is_vertex() && lifted[1].from.is_vertex());

        let sol = solve_let(&mu0, &mu0, &tight()).unwrap();
        let lifted = lift_plan_to_cone(&sol.plan, &mu0, &mu0, 1e-8).unwrap();
        assert_eq!(lifted.len(), 1);
        assert!((lifted[0].from.r - 1.0).abs() < 1e-8 && (lifted[0].weight - 1.0).abs() < 1e-9);
    }

    #[test]
    fn suboptimal_plan_cannot_be_lifted() {
        let mu0 = m(&[(0.0, 1.0)]);
        let mu1 = m(&[(FRAC_PI_3, 1.0)]);
        let plan = TransportPlan::from_entries(
            vec![PlanEntry {
                source: 0,
                target: 0,
                weight: 0.9,
            }],
            &mu0,
            &mu1,
        )
        .unwrap();
        assert!(matches!(
            lift_plan_to_cone(&plan, &mu0, &mu1, 1e-6),
            Err(HkError::NotOptimal { .. })
        ));
    }

    #[test]
    fn rescaled_distance() {
        let opts = tight();
        let d = hk_distance(&m(&[(0.0, 1.0)]), &m(&[(FRAC_PI_3, 1.0)]), 1.0, 4.0, &opts).unwrap();
        assert!((d - 1.0).abs() < 1e-10);
        let d = hk_distance(&DiscreteMeasure::empty(1), &m(&[(0.5, 4.0)]), 1.0, 4.0, &opts).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((prop::collection::vec(0.0..1.5f64, 2), 0.1..2.0f64), 1..4).prop_map(|atoms| {
            DiscreteMeasure::new(2, atoms.into_iter().map(|(x, w)| Atom::new(x, w)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn optimality_conditions_hold(a in arb_measure(), b in arb_measure()) {
            let sol = solve_let(&a, &b, &SolverOptions::default()).unwrap();
            let c = sol.certificate;
            prop_assert!(c.max_complementarity_violation <= 1e-6);
            prop_assert!(c.max_feasibility_violation <= 1e-6);
            prop_assert!(c.duality_gap <= 1e-6);
        }

        #[test]
        fn splitting_identity(a in arb_measure(), b in arb_measure(), shift in 0.0..4.0f64) {
            let opts = SolverOptions::default();
            let far: Vec<Atom> = b.atoms().iter().map(|x| Atom::new(vec![x.x[0] + 6.0 + shift, x.x[1]], x.mass)).collect();
            let b_far = DiscreteMeasure::new(2, far).unwrap();
            let joint = b.plus(&b_far).unwrap();
            let whole = solve_let(&a, &joint, &opts).unwrap().hk_squared;
            let near = solve_let(&a, &b, &opts).unwrap().hk_squared;
            prop_assert!((whole - near - b_far.total_mass()).abs() <= 2e-6);
        }

        #[test]
        fn seeds_give_the_same_marginals(a in arb_measure(), b in arb_measure(), s in 1u64..1000) {
            let s1 = solve_let(&a, &b, &SolverOptions::default()).unwrap();
            let s2 = solve_let(&a, &b, &SolverOptions { seed: s, ..SolverOptions::default() }).unwrap();
            for (x, y) in s1.plan.sigma0.iter().zip(&s2.plan.sigma0) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
            for (x, y) in s1.plan.sigma1.iter().zip(&s2.plan.sigma1) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }

        #[test]
        fn distance_is_a_metric(a in arb_measure(), b in arb_measure(), c in arb_measure()) {
            let opts = SolverOptions::with_tolerance(1e-9);
            let ab = hk_distance(&a, &b, 1.0, 4.0, &opts).unwrap();
            let ba = hk_distance(&b, &a, 1.0, 4.0, &opts).unwrap();
            let ac = hk_distance(&a, &c, 1.0, 4.0, &opts).unwrap();
            let cb = hk_distance(&c, &b, 1.0, 4.0, &opts).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-6);
            prop_assert!(ab <= ac + cb + 1e-6);
        }
    }
}
