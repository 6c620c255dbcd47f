//! Branched microstructures in two-well elasticity.
//!
//! The crate builds explicit piecewise-analytic deformations of a rectangle
//! that realise the optimal energy scaling of a singularly perturbed two-well
//! problem, evaluates their energy, and compares them with the scaling
//! functions and with a direct finite-element minimiser.

pub mod algebra;
pub mod bounds;
pub mod constructions;
pub mod energy;
pub mod field;
pub mod minimizer;
pub mod profile;
pub mod quadrature;
pub mod sweep;

pub use algebra::{Mat2, Well, WellCase, WellSpec};
pub use energy::{EnergyBreakdown, QuadratureSpec};
pub use field::{PiecewiseDeformation, Rect};
