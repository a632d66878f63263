#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffcore;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod identity;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod simkit;
pub mod spatial;
pub mod temporal;
pub mod tracker;

pub use error::{Error, Result};
