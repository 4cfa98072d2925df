//! Samplers for Dirichlet-type posteriors built on the Cox–Ingersoll–Ross
//! process, with subsampled and control-variate gradient estimates, their
//! closed-form moment oracles, and an LDA application.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod estimators;
pub mod lda;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
