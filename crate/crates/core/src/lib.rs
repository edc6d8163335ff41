// `!(a <= b)` style comparisons are used on purpose so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod finite_n;
pub mod functional;
pub mod gs;
pub mod invariants;
pub mod model;
pub mod objective;
pub mod optim;
pub mod quadrature;
pub mod rs;
pub mod util;

pub use error::{Error, Result};
