//! Spectral-Galerkin simulation of the stochastic Cahn-Hilliard equation on
//! (0,1) with Neumann boundary conditions, driven by polynomial truncations
//! of the logarithmic nonlinearity, together with the coupling constructions
//! and Monte-Carlo checks of the Harnack-type inequalities they imply.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod gibbs;
pub mod harnack;
pub mod noise;
pub mod potential;
pub mod report;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
