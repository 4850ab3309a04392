//! Constrained diffusion implicit models for noisy linear inverse problems.
//!
//! A [`score::ScoreModel`] supplies Tweedie estimates of the clean signal;
//! the solvers in [`solver`] interleave deterministic DDIM steps with
//! gradient projections that push the residuals `y - A xhat0` towards a
//! reference noise law.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod constraint;
pub mod error;
pub mod harness;
pub mod measurement;
pub mod oracle;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod signal_io;
pub mod solver;
pub mod tasks;

pub use error::{CdimError, Result};
