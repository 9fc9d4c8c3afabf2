//! Numerical laboratory for fine-tuning versus linear probing in
//! overparameterized two-layer linear networks `f(x) = v^T B x`.
//!
//! * [`subspace`]: principal angles, projections, extractor distance.
//! * [`problem`]: reproducible problem instances.
//! * [`flow`]: gradient flows of FT, LP and LP-FT and the ID/OOD losses.
//! * [`harness`]: bound quantities and verification suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN

pub mod error;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
