//! Multi-labeled complementary-label learning.
//!
//! Each training instance carries one label known to be irrelevant. The crate
//! corrupts multi-label data into that form, estimates the label transition
//! matrix from the complementary data and label co-occurrence, trains a
//! linear multi-label classifier through the transition, and evaluates it with
//! the usual ranking and thresholding metrics.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complementary;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod theory;
pub mod transition;

pub use error::{Error, Result};
pub use linalg::Matrix;
