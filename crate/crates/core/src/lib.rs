//! Numerical toolkit for the zero-temperature Parisi functional of mixed
//! p-spin glasses and its positive-temperature counterpart.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod desk_oracle;
pub mod error;
pub mod functional;
pub mod mixture;
pub mod optimizer;
pub mod order_param;
pub mod quadrature;
pub mod special;
pub mod tailblock;
pub mod verify;

pub use error::{Error, Result};
pub use mixture::MixtureSpec;
pub use order_param::{FiniteTempStepParam, StepOrderParam};
