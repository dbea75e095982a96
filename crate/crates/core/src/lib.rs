//! Domain-aware spatiotemporal streamflow prediction.
//!
//! A pixel-contribution block scales each precipitation pixel by a learnable
//! weight, a multihead 1-D CNN encodes disjoint pixel partitions, and a stacked
//! LSTM plus dense head turns the merged features (and the target day's
//! precipitation) into a discharge estimate. Training can run sequentially or
//! with one worker per convolution head, and whole watersheds can be trained
//! as independent jobs on a worker pool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod exec;
pub mod numerics;
pub mod data;
pub mod model;
pub mod pipeline;
pub mod pixcon;

pub use error::{Error, Result};
