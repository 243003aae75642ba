//! Scalar abstraction shared by the numeric kernels.
//!
//! Density kernels, the extrapolation fit, the replicate variance estimator
//! and the diagnostic statistics are written against [`Real`] so they run in
//! `f32` or `f64`. The estimators that need dense linear algebra (IRLS, the
//! MCMC sampler) are concrete in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the generic kernels.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Natural log of the gamma function.
    fn ln_gamma(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Real for f64 {
    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self)
    }
}

impl Real for f32 {
    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self as f64) as f32
    }
}
