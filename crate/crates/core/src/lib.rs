// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rng;

pub use error::{Error, FormatError, Result};
pub mod estimators;
pub mod phase;
pub mod learn;
pub mod bench;
