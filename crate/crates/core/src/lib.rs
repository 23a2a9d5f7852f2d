//! Numerical kernels for asymptotic Plateau problems in rotationally symmetric
//! (optionally conformally perturbed) Hadamard manifolds.
//!
//! The library builds the conformal unit-ball model of a manifold from a radial
//! curvature profile, minimizes harmonic-map energy of piecewise-linear disc maps
//! spanning expanding boundary curves, and turns the quantitative comparison
//! estimates (growth ratios, area density monotonicity, capacity and area bounds,
//! boundary energy concentration) into executable checks that report pass/fail
//! against explicit tolerances.

pub mod ambient_metric;
pub mod ball_model;
pub mod comparison_ode;
pub mod disc_mesh;
pub mod expansion;
pub mod plateau;
pub mod vecn;
pub mod verification;

pub use comparison_ode::{ComparisonSolution, CurvatureProfile};
