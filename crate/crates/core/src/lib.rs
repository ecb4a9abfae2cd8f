//! Marketing mix modeling over multi-region weekly panels.
//!
//! Channel spend passes through Hill saturation, is mixed along a learned
//! DAG of channel-to-channel effects, and drives a GRU shared across regions
//! whose hidden state produces bounded time-varying coefficients. Training
//! combines a Huber fit term with an augmented-Lagrangian acyclicity
//! constraint. Fitted contributions can be summarized as response curves.

pub mod curves;
pub mod dag;
pub mod error;
pub mod model;
pub mod numeric;
pub mod panel;
pub mod saturation;
pub mod trainer;

pub use error::{Error, Result};
