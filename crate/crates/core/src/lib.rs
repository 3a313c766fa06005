//! Inexact augmented Lagrangian method for convex programs
//!
//! ```text
//! min g(x) + h(x)  s.t.  Ax = b,  f_i(x) <= 0,  x in X
//! ```
//!
//! with Nesterov's accelerated proximal gradient method as the inner solver,
//! evaluation counting, and certificates for the error bounds and iteration
//! budgets of the method.

pub mod apg;
pub mod augmented;
pub mod certificates;
pub mod cli;
mod error;
pub mod ialm;
pub mod problem;
pub mod qcqp;

pub use error::{IalmError, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
