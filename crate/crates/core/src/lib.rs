//! Pseudo-spectral laboratory for the full compressible Navier-Stokes equations on the
//! periodic torus, in Eulerian and Lagrangian coordinates.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod constitutive;
pub mod estimates;
pub mod eulerian;
pub mod error;
pub mod flow;
pub mod harness;
pub mod imex;
pub mod lagrangian;
pub mod littlewood_paley;
pub mod snapshot;
pub mod spectral;

pub use error::{CnsError, Result};
