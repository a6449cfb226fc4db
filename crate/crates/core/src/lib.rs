//! Anchor-free one-stage temporal action detection with a selective
//! receptive-field attention block, trained on synthetic feature sequences.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod decode_eval;
pub mod error;
pub mod gradient_suite;
pub mod head;
pub mod loss;
pub mod model;
pub mod srfc;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
