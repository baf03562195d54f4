//! Numerical laboratory for the potential-well method applied to
//! `u_t − Δu = |u|^{p−1}u` with homogeneous Dirichlet data on intervals and
//! rectangles.

pub mod comparison;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod nehari;

pub use error::{PwError, Result};
pub use functionals::{FunctionalReport, Params};
pub use mesh::{GridFunction, Mesh};
