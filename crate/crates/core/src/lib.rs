//! Perturbation bootstrap for regression M-estimators.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boot;
pub mod cli;
pub mod diagnostics;
pub mod edgeworth;
pub mod io;
pub mod linalg;
pub mod mest;
pub mod perturb;
pub mod rng;
pub mod score;
pub mod sim;
pub mod stats;
