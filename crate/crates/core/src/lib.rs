//! Two-dimensional stochastic Rayleigh-Benard convection.
//!
//! Finite- and infinite-Prandtl solvers in homogeneous temperature variables,
//! nudged coupling with Girsanov diagnostics, pathwise comparison checks,
//! Nusselt estimators and the background-profile bound.

pub mod banded;
pub mod boussinesq;
pub mod config;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod grid;
mod implicit;
pub mod infinite_pr;
pub mod noise;
pub mod params;
pub mod spectral;
pub mod snapshot;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{grad_norm, l2_norm, lp_norm, Grid, Normed, ScalarField, VelocityField};
