//! Scalar abstraction for the linear algebra kernels.
//!
//! The sparse/dense kernels and Krylov solvers are generic over the
//! floating-point type; the discretization and simulation layers pin
//! everything to `f64` through the aliases at the crate root.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by the linear algebra kernels.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from `f64` constants.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant conversion")
    }
}

impl<T> Scalar for T where
    T: Float + NumAssign + FromPrimitive + Sum + Debug + Display + LowerExp + Send + Sync + 'static
{
}
