//! Respiratory variation (RV) reconstruction from fMRI ROI time series and
//! head-motion parameters.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filters;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod windows;
pub mod signals;
pub mod synth;

pub use error::{Error, Result};
