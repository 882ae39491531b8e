//! Representational-similarity metrics (linear CKA, orthogonal Procrustes)
//! and a small fully-connected VAE laboratory for studying how layer
//! representations move under different disentanglement objectives.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! experiment orchestration live in the `simscope` crate.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod collapse;
pub mod data;
mod error;
pub mod matrix;
pub mod rng;
pub mod similarity;
pub mod vae;

pub use error::{Error, Result};
pub use matrix::{ActivationMatrix, Matrix};
pub use similarity::{Metric, SimilarityGrid, SimilarityScore};
