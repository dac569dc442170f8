//! Hellinger-Kantorovich distance between finite measures: LET solver,
//! cone lifts, dual potentials, Hopf-Lax flows, geodesics and convexity
//! certification of integral functionals.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone_geometry;
pub mod convexity;
pub mod dual_potentials;
pub mod error;
pub mod geodesics;
pub mod hopf_lax;
pub mod let_solver;
pub mod measures;

pub use cone_geometry::{
    cone_distance, cone_geodesic, homogeneous_projection, lift, monge_cost, ConePoint, DilationTransportPair,
    LiftedAtom,
};
pub use convexity::{
    bbb_matrix, certify, certify_with_tolerance, default_grid, empirical_convexity_between,
    empirical_geodesic_convexity, eps, eps_all, lambda_opt, log_grid, monotonicity_suite, n_e, n_e_conditions_hold,
    ConditionVerdict, ConvexityReport, DensityFunction, EmpiricalConvexity, EnergySpec, GeodesicSource,
    MonotonicityReport, Pchip, CERTIFY_TOLERANCE,
};
pub use dual_potentials::{
    backward_l_transform, check_tightness, forward_l_transform, monge_map_from_potential, potentials_from_plan,
    AnalyticPotential, PointFunction, PotentialField, PotentialPair,
};
pub use error::{HkError, Result};
pub use geodesics::{
    build_geodesic, check_density_convexity, density_along_flow, linf_convexity_check, restrict_geodesic, sample,
    split_singular, DensityProfile, GeodesicCurve, GridGeodesic, LinfReport, TransportedDensity,
};
pub use hopf_lax::{
    characteristic_flow, constant_flow, contact_set, contact_tolerance, curvature_diagnostics, forward_from_points,
    forward_operator, hopf_lax_backward, hopf_lax_backward_points, hopf_lax_forward, hopf_lax_forward_points,
    lipschitz_bound, semigroup_residual, transport_map, z_factor, CharacteristicState, ConstantFamily, ContactSet,
    CurvatureReport, FlowOptions, Jet, SmoothHopfLax, Trajectory, TwoDiracFamily, XiFamily,
};
pub use let_solver::{
    brute_force_let, hk_distance, let_objective, lift_plan_to_cone, solve_let, LetSolution, LiftedPair,
    OptimalityCertificate, PlanEntry, SolverOptions, TransportPlan,
};
pub use measures::{
    decompose_supports, grid_to_measure, is_reduced, rescale_from_canonical, rescale_to_canonical, Atom,
    DiscreteMeasure, GridDensity, GridFunction, GridSpec, Reducedness, SupportDecomposition,
};
