//! Support recovery by orthogonal matching pursuit with a residual-normalized
//! stopping threshold, together with the random designs, closed-form
//! sample-size constants and Monte Carlo harness used to study it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod omp;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use omp::{run_omp, run_omp_gram, GramSystem, OmpConfig, OmpTrace, RegressionInstance, SelectionRule, StopReason};
