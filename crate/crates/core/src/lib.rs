//! Lagrangian compressible-Euler hydrodynamics with windowed, hyper-reduced
//! projection-based reduced order models, at desk scale.
//!
//! The crate simulates the single-mode 2D Rayleigh-Taylor instability on a
//! moving quadrilateral mesh (the full order model, FOM) and accelerates it
//! with per-window POD bases, SNS nonlinear-term bases, and oversampled DEIM
//! hyper-reduction. Windows are subintervals of an indicator range; two
//! indicators are provided: physical time and interface penetration distance.
//!
//! Module map:
//! - [`mesh`] - Cartesian quad mesh, tensor-product FE spaces, mass matrices
//! - [`fom`] - semi-discrete Lagrangian Euler equations, RK2-average stepping
//! - [`snapshots`] - stage-state snapshot collection and the `.lsnap` format
//! - [`windows`] - indicators and the adaptive partition of their range
//! - [`rom`] - offline construction: POD, SNS, sampling, window operators
//! - [`online`] - windowed hyper-reduced time marching on sampled elements
//! - [`metrics`] - relative errors, run reports, Pareto filtering
//! - [`cli`] - the phase-based command-line driver

pub mod cli;
pub mod fom;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod online;
pub mod rom;
pub mod snapshots;
pub mod windows;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad refinement level, degrees, thresholds, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid input data (non-positive density, incompatible sizes, ...).
    #[error("input error: {0}")]
    Input(String),
    /// A time step could not be completed at any acceptable step size.
    #[error("solver failure: {0}")]
    Solver(String),
    /// Non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// An indicator trajectory violates the monotonicity assumption.
    #[error("indicator not non-decreasing: {0}")]
    IndicatorDecreasing(String),
    /// The online indicator left the offline partition range.
    #[error("indicator range exhausted: {0}")]
    IndicatorExhausted(String),
    /// A sampled operator lost column rank.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    /// Malformed or truncated on-disk data.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Contract violation inside the crate (out-of-order recording, ...).
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Signal raised by a stepper stage when the deformed mesh inverts; the
/// caller reacts by halving the step size and retrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepFailure {
    /// Element on which the Jacobian determinant became non-positive.
    pub element: usize,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "mesh inversion in element {}", self.element)
    }
}
