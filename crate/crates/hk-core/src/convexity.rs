//! Geodesic λ-convexity of integral functionals `∫ E(c) dx + E'_∞ μ^⊥`:
//! the ε-calculus, the matrix 𝔹(c), the auxiliary function `N_E`, the
//! certification suite, `λ_opt`, and empirical checks along geodesics.
//!
//! λ conventions: `certify` and `lambda_opt` test `𝔹(c) ⪰ diag(0, λc/2)`.
//! The empirical chord check uses
//! `𝓔(μ_t) <= (1-t)𝓔(μ_0) + t𝓔(μ_1) - (λ/2) t(1-t) HK²`, under which the
//! mass functional (`E(c) = c`, certified for λ = 1) has λ = 2.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HkError, Result};
use crate::geodesics::{build_geodesic, GeodesicCurve, GridGeodesic};
use crate::let_solver::SolverOptions;
use crate::measures::DiscreteMeasure;

/// Relative slack of the pointwise sign tests.
pub const CERTIFY_TOLERANCE: f64 = 1e-9;
const DEFAULT_GRID_POINTS: usize = 400;
const DEFAULT_GRID_LO: f64 = 1e-6;
const DEFAULT_GRID_HI: f64 = 1e6;
const GOLDEN_ITERATIONS: usize = 80;

/// Serializable description of a density function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnergySpec {
    /// `c^m`, `m > 0`
    Power {
        m: f64,
    },
    /// `-c^q`, `0 < q < 1`
    NegativePower {
        q: f64,
    },
    /// `c log c`
    Boltzmann,
    /// `κ c` on `[0, cap]`, `+inf` beyond
    CappedLinear {
        kappa: f64,
        cap: f64,
    },
    Sum {
        terms: Vec<EnergySpec>,
    },
    /// `(c, E(c))` samples starting at `(0, 0)`, interpolated by monotone
    /// piecewise-cubic Hermite splines; `+inf` beyond the last sample.
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Pchip {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(HkError::DomainError("tabulated E needs at least two samples".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(HkError::DomainError(
                "tabulated abscissae must be finite and increasing".into(),
            ));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let s: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m = vec![s[0], s[0]];
        } else {
            for i in 1..n - 1 {
                if s[i - 1] * s[i] > 0.0 {
                    let (w1, w2) = (2.0 * h[i] + h[i - 1], h[i] + 2.0 * h[i - 1]);
                    m[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
                }
            }
            m[0] = end_slope(h[0], h[1], s[0], s[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        }
        Ok(Pchip { x, y, m })
    }

    fn segment(&self, c: f64) -> usize {
        match self.x.partition_point(|v| *v <= c) {
            0 => 0,
            k => (k - 1).min(self.x.len() - 2),
        }
    }

    /// Value and first two derivatives.
    pub fn eval(&self, c: f64) -> (f64, f64, f64) {
        let i = self.segment(c);
        let h = self.x[i + 1] - self.x[i];
        let t = (c - self.x[i]) / h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i] * h, self.m[i + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        let v =
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let d1 = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        let d2 =
            ((12.0 * t - 6.0) * y0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * y1 + (6.0 * t - 2.0) * m1) / (h * h);
        (v, d1, d2)
    }

    pub fn upper(&self) -> f64 {
        *self.x.last().unwrap()
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        0.0
    } else if s0 * s1 <= 0.0 && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A density function `E: [0, ∞) -> R ∪ {+∞}` with `E(0) = 0`.
#[derive(Clone)]
pub enum DensityFunction {
    Power(f64),
    NegativePower(f64),
    Boltzmann,
    CappedLinear {
        kappa: f64,
        cap: f64,
    },
    Sum(Vec<DensityFunction>),
    Tabulated(Pchip),
    /// Derivatives by finite differences.
    Custom {
        value: Arc<ScalarFn>,
        recession: f64,
        upper: f64,
    },
}

impl fmt::Debug for DensityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityFunction::Power(m) => write!(f, "Power({m})"),
            DensityFunction::NegativePower(q) => write!(f, "NegativePower({q})"),
            DensityFunction::Boltzmann => write!(f, "Boltzmann"),
            DensityFunction::CappedLinear { kappa, cap } => write!(f, "CappedLinear({kappa}, {cap})"),
            DensityFunction::Sum(t) => f.debug_tuple("Sum").field(t).finish(),
            DensityFunction::Tabulated(p) => write!(f, "Tabulated({} points)", p.x.len()),
            DensityFunction::Custom { recession, upper, .. } => {
                write!(f, "Custom(recession {recession}, upper {upper})")
            }
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HkError::NonpositiveParameter { name, value: v })
    }
}

fn ext_add(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY || b == f64::INFINITY {
        f64::INFINITY
    } else {
        a + b
    }
}

impl DensityFunction {
    pub fn from_spec(spec: &EnergySpec) -> Result<Self> {
        Ok(match spec {
            EnergySpec::Power { m } => {
                positive("m", *m)?;
                DensityFunction::Power(*m)
            }
            EnergySpec::NegativePower { q } => {
                if !(*q > 0.0 && *q < 1.0) {
                    return Err(HkError::DomainError(format!("negative power needs 0 < q < 1, got {q}")));
                }
                DensityFunction::NegativePower(*q)
            }
            EnergySpec::Boltzmann => DensityFunction::Boltzmann,
            EnergySpec::CappedLinear { kappa, cap } => {
                positive("cap", *cap)?;
                if !kappa.is_finite() {
                    return Err(HkError::DomainError(format!("kappa must be finite, got {kappa}")));
                }
                DensityFunction::CappedLinear {
                    kappa: *kappa,
                    cap: *cap,
                }
            }
            EnergySpec::Sum { terms } => {
                if terms.is_empty() {
                    return Err(HkError::DomainError("empty sum of density functions".into()));
                }
                DensityFunction::Sum(terms.iter().map(Self::from_spec).collect::<Result<_>>()?)
            }
            EnergySpec::Tabulated { points } => {
                if points.first().map(|p| (p.0, p.1)) != Some((0.0, 0.0)) {
                    return Err(HkError::DomainError("tabulated E must start at (0, 0)".into()));
                }
                DensityFunction::Tabulated(Pchip::new(points)?)
            }
        })
    }

    pub fn custom(value: impl Fn(f64) -> f64 + Send + Sync + 'static, recession: f64, upper: f64) -> Self {
        DensityFunction::Custom {
            value: Arc::new(value),
            recession,
            upper,
        }
    }

    pub fn value(&self, c: f64) -> f64 {
        if c < 0.0 || c.is_nan() {
            return f64::INFINITY;
        }
        match self {
            DensityFunction::Power(m) => c.powf(*m),
            DensityFunction::NegativePower(q) => -c.powf(*q),
            DensityFunction::Boltzmann => {
                if c == 0.0 {
                    0.0
                } else {
                    c * c.ln()
                }
            }
            DensityFunction::CappedLinear { kappa, cap } => {
                if c <= *cap {
                    kappa * c
                } else {
                    f64::INFINITY
                }
            }
            DensityFunction::Sum(t) => t.iter().fold(0.0, |acc, e| ext_add(acc, e.value(c))),
            DensityFunction::Tabulated(p) => {
                if c <= p.upper() {
                    p.eval(c).0
                } else {
                    f64::INFINITY
                }
            }
            DensityFunction::Custom { value, upper, .. } => {
                if c <= *upper {
                    value(c)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn analytic_d1_d2(&self, c: f64) -> Option<(f64, f64)> {
        match self {
            DensityFunction::Power(m) => Some((m * c.powf(m - 1.0), m * (m - 1.0) * c.powf(m - 2.0))),
            DensityFunction::NegativePower(q) => Some((-q * c.powf(q - 1.0), -q * (q - 1.0) * c.powf(q - 2.0))),
            DensityFunction::Boltzmann => Some((c.ln() + 1.0, 1.0 / c)),
            DensityFunction::CappedLinear { kappa, .. } => Some((*kappa, 0.0)),
            DensityFunction::Sum(t) => t.iter().try_fold((0.0, 0.0), |acc, e| {
                e.analytic_d1_d2(c).map(|(a, b)| (acc.0 + a, acc.1 + b))
            }),
            DensityFunction::Tabulated(p) => {
                let (_, d1, d2) = p.eval(c);
                Some((d1, d2))
            }
            DensityFunction::Custom { .. } => None,
        }
    }

    /// `lim E(c)/c` as `c -> ∞`.
    pub fn recession(&self) -> f64 {
        match self {
            DensityFunction::Power(m) => {
                if *m > 1.0 {
                    f64::INFINITY
                } else if *m == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            DensityFunction::NegativePower(_) => 0.0,
            DensityFunction::Boltzmann | DensityFunction::CappedLinear { .. } | DensityFunction::Tabulated(_) => {
                f64::INFINITY
            }
            DensityFunction::Sum(t) => t.iter().fold(0.0, |acc, e| ext_add(acc, e.recession())),
            DensityFunction::Custom { recession, upper, .. } => {
                if upper.is_finite() {
                    f64::INFINITY
                } else {
                    *recession
                }
            }
        }
    }

    /// Upper end `c_E` of the domain.
    pub fn domain_upper(&self) -> f64 {
        match self {
            DensityFunction::CappedLinear { cap, .. } => *cap,
            DensityFunction::Tabulated(p) => p.upper(),
            DensityFunction::Custom { upper, .. } => *upper,
            DensityFunction::Sum(t) => t.iter().map(|e| e.domain_upper()).fold(f64::INFINITY, f64::min),
            _ => f64::INFINITY,
        }
    }

    /// Convexity and lower semicontinuity are only sampled, not known.
    pub fn sampled_only(&self) -> bool {
        match self {
            DensityFunction::Tabulated(_) | DensityFunction::Custom { .. } => true,
            DensityFunction::Sum(t) => t.iter().any(|e| e.sampled_only()),
            _ => false,
        }
    }

    fn check_interior(&self, c: f64) -> Result<()> {
        if c > 0.0 && c < self.domain_upper() && c.is_finite() {
            Ok(())
        } else {
            Err(HkError::OutsideDomain { c })
        }
    }

    /// `(E'(c), E''(c))`, analytic when available, otherwise central
    /// differences (steps `max(1e-6, 1e-6 c)` and `max(1e-4, 1e-4 c)`, kept
    /// inside the domain) with Richardson extrapolation.
    pub fn derivatives(&self, c: f64) -> Result<(f64, f64)> {
        self.check_interior(c)?;
        if let Some(d) = self.analytic_d1_d2(c) {
            return Ok(d);
        }
        let room = c.min(self.domain_upper() - c) / 4.0;
        let h1 = (1e-6f64).max(1e-6 * c).min(room);
        // wider step for the second difference keeps rounding near 1e-8
        let h2 = (1e-4f64).max(1e-4 * c).min(room);
        let f = |x: f64| self.value(x);
        let d1 = |h: f64| (f(c + h) - f(c - h)) / (2.0 * h);
        let d2 = |h: f64| (f(c + h) - 2.0 * f(c) + f(c - h)) / (h * h);
        let first = (4.0 * d1(h1 / 2.0) - d1(h1)) / 3.0;
        let second = (4.0 * d2(h2 / 2.0) - d2(h2)) / 3.0;
        Ok((first, second))
    }
}

/// `ε_0 = E(c)`, `ε_1 = c E'(c)`, `ε_2 = c² E''(c)`.
pub fn eps(e: &DensityFunction, c: f64, j: usize) -> Result<f64> {
    let [e0, e1, e2] = eps_all(e, c)?;
    match j {
        0 => Ok(e0),
        1 => Ok(e1),
        2 => Ok(e2),
        _ => Err(HkError::DomainError(format!("eps index {j} not in {{0, 1, 2}}"))),
    }
}

pub fn eps_all(e: &DensityFunction, c: f64) -> Result<[f64; 3]> {
    let (d1, d2) = e.derivatives(c)?;
    Ok([e.value(c), c * d1, c * c * d2])
}

/// `𝔹(c) = [[ε₂ - (d-1)/d (ε₁-ε₀), ε₂ - (ε₁-ε₀)/2], [·, ε₂ + ε₁/2]]`.
pub fn bbb_matrix(e: &DensityFunction, c: f64, d: usize) -> Result<[[f64; 2]; 2]> {
    let [e0, e1, e2] = eps_all(e, c)?;
    Ok(bbb_from_eps(e0, e1, e2, d))
}

fn bbb_from_eps(e0: f64, e1: f64, e2: f64, d: usize) -> [[f64; 2]; 2] {
    let df = d as f64;
    let b11 = e2 - (df - 1.0) / df * (e1 - e0);
    let b12 = e2 - 0.5 * (e1 - e0);
    let b22 = e2 + 0.5 * e1;
    [[b11, b12], [b12, b22]]
}

fn min_eigenvalue(m: [[f64; 2]; 2]) -> f64 {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lo = mean - rad;
    // cancellation-free form when the product of eigenvalues is small
    let hi = mean + rad;
    if hi > 0.0 && lo.abs() < 1e-8 * hi {
        (a * d - b * b) / hi
    } else {
        lo
    }
}

/// `N_E(ρ, γ) = (ρ/γ)^d E(γ^{2+d} / ρ^d)`.
pub fn n_e(e: &DensityFunction, rho: f64, gamma: f64, d: usize) -> f64 {
    let df = d as f64;
    let c = gamma.powf(2.0 + df) / rho.powf(df);
    let v = e.value(c);
    if v == f64::INFINITY {
        return f64::INFINITY;
    }
    (rho / gamma).powf(df) * v
}

/// Outcome of one pointwise condition over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub holds: bool,
    /// Smallest normalized value `quantity / (|ε₀|+|ε₁|+|ε₂|+|λ|c)`.
    pub margin: f64,
    pub worst_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub dimension: usize,
    pub lambda: f64,
    /// `𝔹(c) - diag(0, λc/2)` positive semidefinite.
    pub b_psd: ConditionVerdict,
    /// `(d-1)(ε₁ - ε₀) >= 0`.
    pub monotone_h: ConditionVerdict,
    /// `𝔹₂₂ - λc/2 >= 0`.
    pub hellinger: ConditionVerdict,
    /// `𝔹₁₁ >= 0`.
    pub mccann: ConditionVerdict,
    /// `(d+2)ε₁ - 2ε₀ - dλc >= 0`.
    pub extra: ConditionVerdict,
    /// `det(𝔹(c) - diag(0, λc/2))`, normalized by the squared scale.
    pub det_margin: f64,
    /// Whether `B₁ >= λc/2` held wherever the first and third of the
    /// three-condition form held.
    pub middle_implied: bool,
    pub sampled_only: bool,
    pub overall: bool,
}

impl ConvexityReport {
    /// Most specific failing condition, if any.
    pub fn failing_condition(&self) -> Option<&'static str> {
        [
            ("hellinger", &self.hellinger),
            ("mccann", &self.mccann),
            ("monotone_h", &self.monotone_h),
            ("extra", &self.extra),
            ("b_psd", &self.b_psd),
        ]
        .into_iter()
        .find(|(_, v)| !v.holds)
        .map(|(n, _)| n)
    }
}

/// `n` log-spaced points on `[1e-6, min(c_E, 1e6)]`, kept inside the domain.
pub fn default_grid(e: &DensityFunction) -> Vec<f64> {
    let upper = e.domain_upper();
    let hi = if upper.is_finite() {
        upper * (1.0 - 1e-9)
    } else {
        DEFAULT_GRID_HI.min(upper)
    };
    log_grid(DEFAULT_GRID_LO.min(hi / 10.0), hi, DEFAULT_GRID_POINTS)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Normalized margins of all conditions at one `c`.
struct Margins {
    b_psd: f64,
    monotone_h: f64,
    hellinger: f64,
    mccann: f64,
    extra: f64,
    det: f64,
    otto_first: bool,
    otto_middle: bool,
    otto_third: bool,
}

fn margins(e: &DensityFunction, c: f64, d: usize, lambda: f64, tol: f64) -> Result<Margins> {
    let [e0, e1, e2] = eps_all(e, c)?;
    let df = d as f64;
    let scale = e0.abs() + e1.abs() + e2.abs() + lambda.abs() * c + f64::MIN_POSITIVE;
    let b = bbb_from_eps(e0, e1, e2, d);
    let shift = lambda * c / 2.0;
    let shifted = [[b[0][0], b[0][1]], [b[1][0], b[1][1] - shift]];
    let det = shifted[0][0] * shifted[1][1] - shifted[0][1] * shifted[0][1];
    // three-condition form with the same shift
    let h = e1 - e0;
    let b1 = 1.5 * e1 - e0;
    let otto = [
        [e2 - (df - 1.0) / df * h, 0.5 * (-2.0 * e2 + h)],
        [0.5 * (-2.0 * e2 + h), e2 + 0.5 * e1 - shift],
    ];
    Ok(Margins {
        b_psd: min_eigenvalue(shifted) / scale,
        monotone_h: (df - 1.0) * h / scale,
        hellinger: (b[1][1] - shift) / scale,
        mccann: b[0][0] / scale,
        extra: ((df + 2.0) * e1 - 2.0 * e0 - df * lambda * c) / scale,
        det: det / (scale * scale),
        otto_first: (df - 1.0) * h >= -tol * scale,
        otto_middle: b1 - shift >= -tol * scale,
        otto_third: min_eigenvalue(otto) >= -tol * scale,
    })
}

/// Golden-section minimization of `f` over `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Grid minimum of `f` refined by golden-section search in `log c` between
/// the neighbours of the grid argmin.
fn refined_min(grid: &[f64], values: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (k, v) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    if grid.len() < 2 {
        return (grid[k], v);
    }
    let lo = grid[k.saturating_sub(1)].ln();
    let hi = grid[(k + 1).min(grid.len() - 1)].ln();
    let (lc, lv) = golden_min(|l| f(l.exp()), lo, hi);
    if lv < v {
        (lc.exp(), lv)
    } else {
        (grid[k], v)
    }
}

fn verdict(grid: &[f64], values: &[f64], tol: f64, f: impl Fn(f64) -> f64) -> ConditionVerdict {
    let (c, m) = refined_min(grid, values, f);
    ConditionVerdict {
        holds: m >= -tol,
        margin: m,
        worst_c: c,
    }
}

pub fn certify(e: &DensityFunction, d: usize, lambda: f64, c_grid: Option<&[f64]>) -> Result<ConvexityReport> {
    certify_with_tolerance(e, d, lambda, c_grid, CERTIFY_TOLERANCE)
}

/// [`certify`] with an explicit relative slack.
pub fn certify_with_tolerance(
    e: &DensityFunction,
    d: usize,
    lambda: f64,
    c_grid: Option<&[f64]>,
    tol: f64,
) -> Result<ConvexityReport> {
    if d == 0 {
        return Err(HkError::NonpositiveParameter { name: "d", value: 0.0 });
    }
    let owned;
    let grid = match c_grid {
        Some(g) => g,
        None => {
            owned = default_grid(e);
            &owned
        }
    };
    if grid.is_empty() {
        return Err(HkError::EmptyGrid);
    }
    let ms: Vec<Margins> = grid
        .par_iter()
        .map(|c| margins(e, *c, d, lambda, tol))
        .collect::<Result<_>>()?;
    let pick = |f: fn(&Margins) -> f64| -> ConditionVerdict {
        let vals: Vec<f64> = ms.iter().map(f).collect();
        verdict(grid, &vals, tol, |c| {
            margins(e, c, d, lambda, tol).map(|m| f(&m)).unwrap_or(f64::INFINITY)
        })
    };
    let b_psd = pick(|m| m.b_psd);
    let monotone_h = pick(|m| m.monotone_h);
    let hellinger = pick(|m| m.hellinger);
    let mccann = pick(|m| m.mccann);
    let extra = pick(|m| m.extra);
    let det_margin = ms.iter().map(|m| m.det).fold(f64::INFINITY, f64::min);
    let middle_implied = ms.iter().all(|m| !(m.otto_first && m.otto_third) || m.otto_middle);
    Ok(ConvexityReport {
        dimension: d,
        lambda,
        overall: b_psd.holds && monotone_h.holds,
        b_psd,
        monotone_h,
        hellinger,
        mccann,
        extra,
        det_margin,
        middle_implied,
        sampled_only: e.sampled_only(),
    })
}

/// `λ_opt = inf_c 2 det 𝔹(c) / (c 𝔹₁₁(c))` and its minimizer.
pub fn lambda_opt(e: &DensityFunction, d: usize, c_grid: Option<&[f64]>) -> Result<(f64, f64)> {
    let owned;
    let grid = match c_grid {
        Some(g) => g,
        None => {
            owned = default_grid(e);
            &owned
        }
    };
    if grid.is_empty() {
        return Err(HkError::EmptyGrid);
    }
    let ell = |c: f64| -> Result<f64> {
        let [e0, e1, e2] = eps_all(e, c)?;
        let b = bbb_from_eps(e0, e1, e2, d);
        let scale = e0.abs() + e1.abs() + e2.abs();
        if !(b[0][0] > 1e-12 * scale) {
            return Err(HkError::McCannDegenerate { c, value: b[0][0] });
        }
        Ok(2.0 * (b[0][0] * b[1][1] - b[0][1] * b[0][1]) / (c * b[0][0]))
    };
    let vals: Vec<f64> = grid.par_iter().map(|c| ell(*c)).collect::<Result<_>>()?;
    let (c, v) = refined_min(grid, &vals, |c| ell(c).unwrap_or(f64::INFINITY));
    Ok((v, c))
}

/// Three equivalent monotonicity statements, each checked numerically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// `c -> c^{-2/(d+2)} E(c)` non-decreasing on the grid.
    pub a_holds: bool,
    /// `(1 - 4/d²) ρ ∂_ρ N_E + γ ∂_γ N_E >= 0` at sampled points.
    pub b_holds: bool,
    /// `s -> N_E(s^{1-4/d²} ρ, s γ)` non-decreasing at sampled points.
    pub c_holds: bool,
    pub agree: bool,
}

/// Sampled `(ρ, γ)` with `γ^{d+2}/ρ^d = c` for each grid value `c`.
fn rho_gamma_samples(grid: &[f64], d: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let df = d as f64;
    grid.iter()
        .map(|c| {
            let rho: f64 = rng.random_range(-1.0f64..1.0).exp();
            (rho, (c * rho.powf(df)).powf(1.0 / (df + 2.0)))
        })
        .collect()
}

pub fn monotonicity_suite(e: &DensityFunction, d: usize, c_grid: &[f64], seed: u64) -> Result<MonotonicityReport> {
    if c_grid.is_empty() {
        return Err(HkError::EmptyGrid);
    }
    let df = d as f64;
    let k = 2.0 / (df + 2.0);
    let f: Vec<f64> = c_grid.iter().map(|c| c.powf(-k) * e.value(*c)).collect();
    let a_holds = f
        .windows(2)
        .all(|w| w[1] >= w[0] - CERTIFY_TOLERANCE * (w[0].abs() + w[1].abs()) || w[1].is_infinite());
    let factor = 1.0 - 4.0 / (df * df);
    let pts = rho_gamma_samples(c_grid, d, seed);
    let mut b_holds = true;
    let mut c_holds = true;
    for (rho, gamma) in pts {
        let n0 = n_e(e, rho, gamma, d);
        if !n0.is_finite() {
            continue;
        }
        let h = 1e-5;
        let np = |r: f64, g: f64| n_e(e, r, g, d);
        let (a, b) = (np(rho * (1.0 + h), gamma), np(rho * (1.0 - h), gamma));
        let (cg, dg) = (np(rho, gamma * (1.0 + h)), np(rho, gamma * (1.0 - h)));
        if [a, b, cg, dg].iter().all(|v| v.is_finite()) {
            let r_dr = (a - b) / (2.0 * h);
            let g_dg = (cg - dg) / (2.0 * h);
            let scale = r_dr.abs() + g_dg.abs() + n0.abs();
            if factor * r_dr + g_dg < -1e-6 * scale {
                b_holds = false;
            }
        }
        // s on a geometric grid around 1
        let vals: Vec<f64> = (-20..=20)
            .map(|j| {
                let s = (j as f64 * 0.05).exp();
                np(s.powf(factor) * rho, s * gamma)
            })
            .collect();
        if vals
            .windows(2)
            .any(|w| w[0].is_finite() && w[1] < w[0] - 1e-9 * (w[0].abs() + w[1].abs()))
        {
            c_holds = false;
        }
    }
    Ok(MonotonicityReport {
        a_holds,
        b_holds,
        c_holds,
        agree: a_holds == b_holds && b_holds == c_holds,
    })
}

/// Convexity of `N_E` and monotonicity of `ρ -> (d-1) N_E`, tested
/// directly on `N_E` by finite-difference Hessians and midpoint checks at
/// points covering the values `c` of the grid.
pub fn n_e_conditions_hold(e: &DensityFunction, d: usize, c_grid: &[f64], seed: u64) -> bool {
    let pts = rho_gamma_samples(c_grid, d, seed);
    let np = |r: f64, g: f64| n_e(e, r, g, d);
    let tol = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for (rho, gamma) in pts {
        let n0 = np(rho, gamma);
        if !n0.is_finite() {
            continue;
        }
        let (hr, hg) = (1e-3 * rho, 1e-3 * gamma);
        let v = [
            np(rho + hr, gamma),
            np(rho - hr, gamma),
            np(rho, gamma + hg),
            np(rho, gamma - hg),
            np(rho + hr, gamma + hg),
            np(rho - hr, gamma - hg),
            np(rho + hr, gamma - hg),
            np(rho - hr, gamma + hg),
        ];
        if v.iter().any(|x| !x.is_finite()) {
            continue;
        }
        // Hessian in the scaled variables (ρ/hr, γ/hg)
        let hrr = v[0] - 2.0 * n0 + v[1];
        let hgg = v[2] - 2.0 * n0 + v[3];
        let hrg = (v[4] + v[5] - v[6] - v[7]) / 4.0;
        let s = hrr.abs() + hgg.abs() + 2.0 * hrg.abs() + 1e-12 * n0.abs();
        if hrr < -tol * s || hgg < -tol * s || hrr * hgg - hrg * hrg < -tol * s * s {
            return false;
        }
        // midpoint along a random direction
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (dr, dg) = (hr * th.cos(), hg * th.sin());
        let (p, m) = (np(rho + dr, gamma + dg), np(rho - dr, gamma - dg));
        if p.is_finite() && m.is_finite() && n0 > 0.5 * (p + m) + tol * s {
            return false;
        }
        if d >= 2 && v[0] > v[1] + tol * (v[0].abs() + v[1].abs()) * 1e-3 && v[0] - v[1] > tol * s {
            return false;
        }
    }
    true
}

/// Values of the functional and of the λ-chord along a geodesic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalConvexity {
    pub lambda: f64,
    pub hk_squared: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub chord: Vec<f64>,
    /// Largest `𝓔(μ_t) - chord(t)`; positive means a violation.
    pub max_violation: f64,
    pub worst_t: f64,
}

/// Where the functional is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum GeodesicSource<'a> {
    /// Purely atomic curve: `𝓔(μ) = E'_∞ 𝓜(μ)`.
    Discrete(&'a GeodesicCurve),
    /// Absolutely continuous curve given by the flow of a grid potential.
    Grid(&'a GridGeodesic),
}

fn functional_at(e: &DensityFunction, source: GeodesicSource<'_>, t: f64) -> Result<f64> {
    match source {
        GeodesicSource::Discrete(c) => {
            let mass = c.mass_at(t)?;
            let rec = e.recession();
            if mass == 0.0 {
                Ok(0.0)
            } else if rec == f64::INFINITY {
                Err(HkError::RecessionInfinite { mass })
            } else {
                Ok(rec * mass)
            }
        }
        GeodesicSource::Grid(g) => Ok(g.density_at(t)?.integrate(|c| e.value(c))),
    }
}

/// Evaluates `𝓔(μ_t)` at `n_times` equispaced times and compares with the
/// chord `(1-t)𝓔(μ_0) + t𝓔(μ_1) - (λ/2) t(1-t) HK²`.
pub fn empirical_geodesic_convexity(
    e: &DensityFunction,
    source: GeodesicSource<'_>,
    lambda: f64,
    n_times: usize,
) -> Result<EmpiricalConvexity> {
    if n_times < 2 {
        return Err(HkError::DomainError("need at least two sample times".into()));
    }
    let hk2 = match source {
        GeodesicSource::Discrete(c) => c.hk_squared,
        GeodesicSource::Grid(g) => g.hk_squared()?,
    };
    let times: Vec<f64> = (0..n_times).map(|k| k as f64 / (n_times - 1) as f64).collect();
    let values: Vec<f64> = times
        .par_iter()
        .map(|t| functional_at(e, source, *t))
        .collect::<Result<_>>()?;
    let (v0, v1) = (values[0], values[n_times - 1]);
    let chord: Vec<f64> = times
        .iter()
        .map(|t| (1.0 - t) * v0 + t * v1 - 0.5 * lambda * t * (1.0 - t) * hk2)
        .collect();
    let (mut worst, mut worst_t) = (f64::NEG_INFINITY, 0.0);
    for ((t, v), c) in times.iter().zip(&values).zip(&chord) {
        if v - c > worst {
            worst = v - c;
            worst_t = *t;
        }
    }
    Ok(EmpiricalConvexity {
        lambda,
        hk_squared: hk2,
        times,
        values,
        chord,
        max_violation: worst,
        worst_t,
    })
}

/// Builds the geodesic between two atomic measures and runs the chord check.
pub fn empirical_convexity_between(
    e: &DensityFunction,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    lambda: f64,
    n_times: usize,
    opts: &SolverOptions,
) -> Result<EmpiricalConvexity> {
    let curve = build_geodesic(mu0, mu1, opts)?;
    empirical_geodesic_convexity(e, GeodesicSource::Discrete(&curve), lambda, n_times)
}
