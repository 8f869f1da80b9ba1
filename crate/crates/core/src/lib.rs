//! Explicit ReLU networks that robustly memorize finite labeled datasets,
//! together with the matching parameter/width lower bounds and checkers.
//!
//! Layout:
//! - [`net_ir`]: the network type, evaluation, composition and accounting.
//! - [`dataset`]: datasets, separation constants, ball sampling, hard instances.
//! - [`gadgets`]: exact building blocks (bumps, triangles, floor, bit extraction, ...).
//! - [`reduce`]: separation-preserving projections and ReLU-safe biases.
//! - [`lattice`]: grid translation and the volume-fraction error budget.
//! - [`memorizers`]: the three regime pipelines, dispatch, ℓp wrapper, quantizer.
//! - [`bounds`]: lower-bound formulas, subspace distances, certificates.
//! - [`verify`]: sampling-based robustness verification.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod gadgets;
pub mod lattice;
pub mod memorizers;
pub mod net_ir;
pub mod pl1d;
pub mod reduce;
pub mod verify;

pub use error::{Error, Result};
