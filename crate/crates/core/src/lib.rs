//! Black-box falsification of control policies with Bayesian optimization over
//! a quantitative safety reward, and shield synthesis from the attack results.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod seed;

pub mod attack;
pub mod detector;
pub mod envsim;
pub mod forest;
pub mod gpopt;
pub mod harness;
pub mod neuralctl;
pub mod shield;
pub mod specdsl;

pub use error::{Error, Result};
