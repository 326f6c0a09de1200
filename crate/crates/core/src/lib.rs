#![no_std]
#![doc = include_str!("../README.md")]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod filters;
pub mod lae;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod systems;

pub use error::{Error, Result};
pub use linalg::Matrix;
