//! Group convolutions on SE(2), R²⋊R⁺ and Sim(2) with continuous kernels.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gconv;
pub mod kernelnet;
pub mod lie;
pub mod model;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
