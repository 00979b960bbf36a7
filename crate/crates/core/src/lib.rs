//! Token generation in a toy decoder-only transformer viewed as gradient
//! descent on a dual linear model.
//!
//! Softmax attention is linearized with a random Fourier feature map
//! ([`kernelmap`]); the kernelized forward pass ([`model`]) then equals one
//! descent step of a linear model whose constant part comes from the task
//! tokens and whose gradient comes from the demonstration tokens ([`dual`]).
//! [`metric`] scores demonstrations by where the target token lands and
//! [`optimizer`] runs the multi-path demonstration search on top of it.

pub mod dual;
pub mod error;
pub mod kernelmap;
pub mod metric;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod props;
pub mod rng;
pub mod testkit;

pub use error::{Error, Result};
pub use kernelmap::FourierFeatureMap;
