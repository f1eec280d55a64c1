//! Selfish decentralized controllers for heterogeneous agent populations.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod lti;
pub mod matching;
pub mod norms;
pub mod simulation;
pub mod snapshot;
pub mod youla;

pub use error::{Error, Result};
