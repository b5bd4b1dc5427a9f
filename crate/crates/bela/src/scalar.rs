//! Scalar abstraction for the numeric kernels.
//!
//! All scoring and loss math is generic over [`Scalar`] so the same code runs
//! in f32 for storage-precision checks and in f64 for training and the
//! finite-difference paths. Concrete aliases live at the crate root.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

pub trait Scalar: Float + Sum<Self> + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
