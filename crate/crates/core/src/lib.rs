//! Simulation and verification tools for the line bundle mean curvature flow
//! under Calabi symmetry on the blowup of projective space at a point.
//!
//! The flow reduces to the degenerate parabolic equation
//! `ḟ = u″(x)·(f″/(1+f′²) + (n−1)(xf′−f)/(x²+f²))` on `[1, a]` with pinned
//! endpoint values. This crate evolves that equation, its parametric curve
//! form and its rotated-graph form, certifies explicit barrier families,
//! constructs stationary solutions on level curves of `Im(e^{−iθ̂}zⁿ)`, and
//! classifies classes by comparing central-charge arguments.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barriers;
pub mod curve_flow;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod graph_flow;
pub mod interp;
pub mod ode;
pub mod output;
pub mod profile;
pub mod scenarios;
pub mod stationary;

pub use barriers::{
    build_polar_interpolant, circle_boundary_gap, verify_circle_pde_inequality,
    verify_hyperbola_subsolution, verify_polar_subsolution, CertReport, CircleBarrier,
    HyperbolaBarrier, PolarInterpolant, RateVariant,
};
pub use curve_flow::{curvature_and_xi, CurveProblem, CurveState, RotatedGraphState};
pub use error::{Error, Result};
pub use geometry::{
    central_charge, check_stability, eigenvalues, lifted_angle, phase, CentralCharge, KahlerData,
    PhaseField, Stability, StabilityRecord, Subvariety,
};
pub use graph_flow::{
    comparison_test, monitor_section4, run_until, run_until_with, GraphFlowState, GraphProblem,
    MonitorReport, RunOutput, Section4Audit, StopCause, StopRule,
};
pub use interp::MonotoneCubic;
pub use ode::DormandPrince;
pub use profile::PotentialProfile;
pub use scenarios::{
    build_finite_data, build_infinite_data, run_finite_time, run_infinite_time, run_scenario,
    ScenarioConfig, ScenarioKind, ScenarioReport,
};
pub use stationary::{
    construct_semistable, stationarity_residual, trace_level_curve, LevelCurve, LevelFunction,
    PolarProfile, SemiStableData, TraceOptions,
};
