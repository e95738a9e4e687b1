//! Kalman-Bucy filters, their mean-field particle approximations and the
//! Riccati flows that drive them.

// `!(x <= bound)` is used on purpose so that NaN counts as out of bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enkf;
pub mod error;
pub mod kalman_bucy;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod regions;
pub mod riccati;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use model::{GaussianLaw, LinearGaussianModel, Model};
