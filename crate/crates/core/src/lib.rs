#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod attractor;
pub mod cli;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod shape;
pub mod sparse;
pub mod spectral;
pub mod swarm;

pub use error::{Error, Result};
