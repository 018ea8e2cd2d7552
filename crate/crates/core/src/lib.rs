//! Solver and Monte Carlo toolkit for finite-horizon two-player zero-sum
//! stochastic differential games where both players use impulse controls.
//!
//! The dynamic programming equation of such a game is a double-obstacle
//! quasi-variational inequality: the continuation branch is a linear
//! parabolic operator, and the two obstacles are built from the unknown
//! itself through the intervention operators
//!
//! ```text
//!   (sup-side)  sup_y [ V(t, x + y) - c(t, y) ]
//!   (inf-side)  inf_z [ V(t, x + z) + chi(t, z) ]
//! ```
//!
//! This crate discretizes the equation with an explicit monotone finite
//! difference scheme in time and space and a finite action grid for the
//! impulses, extracts feedback policies from the solved field, simulates
//! the controlled SDE under those policies, and cross-validates the two
//! routes against each other and against structural identities.

pub mod bundle;
pub mod expr;
pub mod grid;
pub mod intervention;
pub mod problem;
pub mod report;
pub mod sim;
pub mod solver;
pub mod strategy;
pub mod verify;

pub use expr::{parse_expr, Expr, ExprError};
pub use grid::{ActionGrid, Axis, GridFunction};
pub use problem::{load_problem, validate_costs, GameSpec, LoadOptions, SpecError};
pub use report::{CheckResult, VerificationReport};
