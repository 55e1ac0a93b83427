//! Kinetic-diffusion Monte Carlo (KDMC) for the one-dimensional Boltzmann-BGK
//! equation, and its multilevel extension (ML-KDMC).
//!
//! The crate is organised bottom-up:
//!
//! - [`background`]: piecewise-linear collision rate and closed-form inversion
//!   of the collision-time integral.
//! - [`kd`]: single-path kinetic-diffusion simulation.
//! - [`correlate`]: correlated fine/coarse path pairs built by mapping and
//!   aggregating the fine path's random numbers.
//! - [`mlmc`]: multilevel estimator, optimal sample allocation and the
//!   tolerance-adaptive driver.
//! - [`levels`]: pilot runs and level-set selection (exact and heuristic).
//! - [`stats`]: keyed random streams, moment accumulators and the
//!   Anderson-Darling test.
//! - [`cli`]: experiment harness behind the `kdmc` binary.

pub mod background;
pub mod cli;
pub mod correlate;
pub mod error;
pub mod kd;
pub mod levels;
pub mod mlmc;
pub mod stats;

pub use background::{Background, BackgroundFamily};
pub use error::{Error, Result};
pub use kd::{EventDraws, KdStepRecord, ParticleState};
pub use mlmc::{EstimatorResult, LevelSet};
