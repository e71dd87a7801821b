//! Fully implicit two-phase (oil/water) flow simulator on hexahedral grids.
//!
//! Darcy's law is discretized with lowest-order mixed hybrid finite elements
//! (face-pressure Lagrange multipliers), the mass balance with a backward
//! Euler finite volume scheme. The linearized systems carry a 3x3 block
//! structure over face pressures, element/well pressures, and saturations,
//! and are solved by flexible right-preconditioned GMRES with a block CPR
//! preconditioner whose Schur complement is approximated by restricted
//! column solves (EDFA).

pub mod bcpr;
pub mod config;
pub mod disc;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod physics;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// CSR matrix at the working precision of the simulator.
pub type CsrMatrix = linalg::Csr<f64>;
/// Small dense matrix at the working precision of the simulator.
pub type DenseMatrix = linalg::Dense<f64>;
/// AMG hierarchy at the working precision of the simulator.
pub type AmgHierarchy = linalg::Amg<f64>;
