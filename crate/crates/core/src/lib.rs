//! Desk-scale diffusion inference acceleration: block-wise W8A8 linears,
//! INT8 smoothed attention, top-k sparse + linear attention, few-step
//! consistency sampling with expert switching, weight-delta merging, and the
//! benchmark/verification harness behind `turbobench`.

pub mod attention;
pub mod bench;
pub mod blockquant;
pub mod error;
pub mod linalg;
pub mod merge;
pub mod model;
pub mod rng;
pub mod tensor_store;

pub use error::{Error, Result};
