//! Floating-point scalar abstraction: f32 or f64.
//!
//! The numeric kernels (dense linear algebra, the surrogate network) are
//! generic over [`Real`] so the same code runs in f64 for training and
//! gradient checks and in f32 for the batched inference path. The physics
//! solvers are pinned to f64 through the crate-root aliases.

use num_traits::{Float, NumAssignOps};

pub trait Real:
    Float + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Narrowing conversion from f64 (identity for f64).
    fn cast_from(v: f64) -> Self;
    /// Widening conversion to f64.
    fn cast_to(self) -> f64;
    fn cast_usize(v: usize) -> Self;
}

impl Real for f32 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn cast_to(self) -> f64 {
        self as f64
    }
    #[inline]
    fn cast_usize(v: usize) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v
    }
    #[inline]
    fn cast_to(self) -> f64 {
        self
    }
    #[inline]
    fn cast_usize(v: usize) -> Self {
        v as f64
    }
}
