//! Scalar abstraction shared by the dense linear algebra and the
//! probability-vector functionals.
//!
//! `Field` is anything with exact-or-approximate field arithmetic and an
//! ordering (f32, f64, `BigRational`). `Real` adds transcendental functions
//! and is what the generator construction needs, since rates are `W e^N`.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

pub trait Field: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive {
    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar field")
    }

    fn magnitude(&self) -> Self {
        Signed::abs(self)
    }

    /// Lossy conversion used for reporting residuals.
    fn approx_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Field for T where T: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive {}

pub trait Real: Field + Float + Copy + Send + Sync {}

impl<T> Real for T where T: Field + Float + Copy + Send + Sync {}
