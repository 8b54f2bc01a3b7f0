#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod diophantine;
pub mod dynamics;
pub mod error;
pub mod fourier;
pub mod kam;
pub mod rotation;

pub use error::{Error, Result};
