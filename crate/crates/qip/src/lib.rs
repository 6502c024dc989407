//! Data handling, file formats and experiment drivers around `qip-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fsutil;

pub use error::{QipError, Result};
