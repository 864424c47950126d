//! Sensitivity prewarping for local surrogate models.
//!
//! A global GP-based sensitivity analysis (ARD length-scales, posterior
//! range, or the expected gradient outer-product matrix) yields a linear map
//! `L`; local predictors (nearest neighbors, local GPs, Vecchia GPs) then run
//! on the warped inputs `Z = X L^T`.

// NaN-rejecting guards read as `!(x > 0.0)`; matrix loops index by position.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod local;
pub mod optim;
pub mod pipeline;
pub mod sensitivity;
pub mod seed;
pub mod warp;

pub use error::{Error, Result};
