//! Scalar abstraction: every numeric component is generic over [`Real`], so
//! training runs in `f32` while verification (gradient checks, oracles) runs
//! the same code in `f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the framework computes in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + LinalgScalar
    + rustfft::FftNum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::Debug
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Name recorded in checkpoints so a file is never loaded at the wrong
    /// precision.
    const NAME: &'static str;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Convert a configuration-level `f64` into the working scalar.
#[inline]
pub fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 converts to scalar")
}

/// Widen the working scalar back to `f64` for reporting.
#[inline]
pub fn to_f64<F: Real>(x: F) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}
