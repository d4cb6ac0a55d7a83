//! Numerics for the Brezis–Nirenberg problem driven by the fractional
//! sub-Laplacian on the Heisenberg group `ℍ^N`.
//!
//! * [`hgroup`]: group law, dilations, Korányi norm and distance.
//! * [`bubble`]: the extremal bubble family, cutoff and truncated test functions.
//! * [`quad`]: seminorm, norm, quotient and volume estimators with standard errors.
//! * [`varsolve`]: point-cloud discretization, first eigenpair, quotient minimization.
//! * [`asympt`]: ε-sweeps, power-law fits and verdicts.
//! * [`cli`]: configuration and the command implementations behind the `hfrac` binary.

pub mod bubble;
pub mod cli;
pub mod asympt;
pub mod error;
pub mod hgroup;
pub mod quad;
pub mod rng;
pub mod varsolve;

pub use error::{Error, Result};
