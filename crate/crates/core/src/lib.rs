//! Quantum visual feature encoding and information-preserving training.
//!
//! This crate holds the numerical core: a dense statevector simulator, the
//! classical-to-quantum encoders, per-qubit Pauli measurement, the
//! information-gap measures, the QIP training loop for a small feature
//! extractor, and the k-NN clustering pipeline with its quantum-attention
//! refiner and evaluation metrics.
//!
//! Everything here is `no_std` + `alloc`. File formats, dataset ingestion and
//! the command-line driver live in the companion `qip` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cluster;
pub mod encode;
pub mod error;
pub mod gap;
pub mod matrix;
pub mod observe;
pub mod qsim;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
