#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Multi-sensor multi-object tracking and density fusion workbench.

pub mod assign;
pub mod bayes;
pub mod dataprep;
pub mod error;
pub mod fusenet;
pub mod harness;
pub mod linalg;
pub mod mb;
pub mod metrics;
pub mod sim;
pub mod tpmb;

pub use error::{Error, Result};
