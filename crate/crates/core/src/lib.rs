#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod exceedance;
pub mod gp;
pub mod grid;
pub mod harness;
pub mod noise;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod sur;

pub use error::{Error, Result};
