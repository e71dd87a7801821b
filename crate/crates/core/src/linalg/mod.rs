//! Sparse and dense linear algebra kernels.

mod amg;
mod csr;
mod dense;
mod krylov;
mod mm;
mod precond;

pub use amg::{Amg, AmgParams};
pub use csr::Csr;
pub use dense::{Dense, DenseLu};
pub use krylov::{gcr, gmres, KrylovResult};
pub use mm::{read_matrix_market, write_matrix_market};
pub use precond::{rcm_ordering, Ilu0, Jacobi};
