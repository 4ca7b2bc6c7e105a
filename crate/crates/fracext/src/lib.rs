//! Numerical laboratory for boundary-reaction equations on the half-space.
//!
//! The crate solves the degenerate-elliptic problem
//! `-div(mu(x) grad u) + g(x,u) = 0` on `R^n x (0, inf)` with the nonlinear
//! flux condition `-mu(x) u_x = f(u)` on the boundary, where the weight
//! `mu(x) = x^alpha` connects the boundary trace to the fractional Laplacian
//! of order `s = (1-alpha)/2`. Around the solver it provides:
//!
//! * direct evaluation of the fractional Laplacian on periodic data, by a
//!   spectral symbol route and an independent principal-value route;
//! * Poisson-kernel extension of boundary data and the numerical
//!   Dirichlet-to-Neumann map;
//! * the second-variation stability form with a smallest-Rayleigh-quotient
//!   eigensolver and a monotonicity certificate;
//! * level-set geometry audits: total curvature, tangential gradients, a
//!   weighted Poincare-type budget, and one-dimensional symmetry fits.
//!
//! Everything is deterministic: fixed summation orders, seeded generators,
//! fixed-format reports.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod error;
pub mod extension;
pub mod fractional;
pub mod geometry;
pub mod grid;
pub mod oracle;
pub mod solver;
pub mod stability;
pub mod util;
pub mod weights;

pub use error::{Error, Result};
