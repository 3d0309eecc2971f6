#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod synthetic;
pub mod teacher;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
mod test_util;
