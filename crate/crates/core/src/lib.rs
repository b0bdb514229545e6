//! Reverse distillation for multivariate time-series forecasting.
//!
//! A lightweight temporal-spectral teacher supervises a transformer student
//! with low-rank adapters during training; only the student is exported
//! for inference.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod input_block;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
