//! Benchmark of adaptive domain randomization methods on small swing-up
//! tasks: simulators, inference methods, a shared policy trainer and the
//! protocol harness that ties them together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adr;
pub mod config;
pub mod dist;
pub mod envs;
pub mod error;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod seed;
pub mod suggest;
pub mod trajectory;

pub use error::{Error, Result};
