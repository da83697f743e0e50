//! Gradient-norm based debiasing (PGD) on synthetic biased image data.
//!
//! The crate covers a small dense-network toolkit ([`nn`]), biased dataset
//! generation ([`data`]), per-sample gradient norms and sampling ([`debias`]),
//! training pipelines for PGD and baselines ([`pipelines`]), Fisher
//! diagnostics ([`fisher`]) and experiment orchestration ([`plan`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod data;
pub mod debias;
pub mod error;
pub mod fisher;
pub mod metrics;
pub mod nn;
pub mod pipelines;
pub mod plan;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
