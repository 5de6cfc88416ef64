//! Numerical core of the Fisher-KPP refined-asymptotics laboratory.

// Guards such as `!(x > 0.0)` are written negated on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod grid;
pub mod interp;
pub mod model;
pub mod probe;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod tridiag;
pub mod vapp;
pub mod wave;

pub use error::{Error, Result};
pub use grid::Grid1D;
