//! Positive ground states of the nonlocal Choquard equation
//! `-Δu + a u = (I_α * F(u)) f(u)` and semiclassical single-peak solutions of
//! its penalized, rescaled counterpart.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod fft3;
pub mod io;
pub mod model;
pub mod par;
pub mod plot;
pub mod quad;
pub mod riesz;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
