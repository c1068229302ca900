//! Reconstruction of dynamic image series from under-sampled (k,t)-space data
//! with a multi-linear, kernel-based, landmark-driven matrix factorization.
//!
//! The pipeline is: [`dataset`] (phantom and tensor files) → [`sampling`]
//! (masks) → [`manifold`] (landmarks and kernel Gram matrices) → [`model`]
//! (factorization state and objective) → [`solver`] (successive convex
//! approximation) → [`metrics`] (image-quality scores). [`cli`] wires the
//! stages together behind the `mlkrim` binary.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense complex matrix, column-major.
pub type CMat = nalgebra::DMatrix<Complex64>;
