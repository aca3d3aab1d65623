//! Floating-point scalar abstraction shared by the signal and learning code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Lossless-enough conversion from `f64` (rounds for `f32`).
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Arithmetic mean, `None` for an empty iterator.
pub fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut n = 0usize;
    let mut acc = T::zero();
    for v in values {
        acc += v;
        n += 1;
    }
    (n > 0).then(|| acc / T::of(n as f64))
}

/// Population mean and standard deviation (divide by n).
pub fn mean_std<T: Scalar>(values: &[T]) -> Option<(T, T)> {
    let m = mean(values.iter().copied())?;
    let n = T::of(values.len() as f64);
    let var = values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
    Some((m, var.sqrt()))
}
