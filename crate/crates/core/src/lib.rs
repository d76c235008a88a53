//! Brownian particles advected by a mollified Gaussian velocity field.
//!
//! The crate couples four numerical views of the same random environment:
//! finite-difference SPDE ensembles for the quenched kernel, Monte Carlo of
//! the one- and two-point motions, deterministic PDE/Volterra solvers for the
//! second moment, and an experiment runner that maps the disorder phase
//! diagram.

pub mod covariance;
pub mod error;
pub mod grid;
pub mod lab;
pub mod noise;
pub mod particles;
pub mod qpde;
pub mod spde;
pub mod stats;

pub use error::{LabError, Result};
