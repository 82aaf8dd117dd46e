//! Numeric scalar abstraction used by the metric code.
//!
//! Precision/recall/F1 and ROUGE-L are ratios of counts, so they can be
//! computed exactly over rationals as well as approximately over floats.
//! Everything in [`crate::eval::metrics`] is written against [`Scalar`].

use num_rational::Ratio;
use num_traits::Num;
use std::fmt::Debug;

pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync {
    /// Lossless conversion from a count (up to the precision of the type).
    fn from_count(n: usize) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn from_count(n: usize) -> Self {
        n as f64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_count(n: usize) -> Self {
        n as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: usize) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count overflows i64"))
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl Scalar for Ratio<i128> {
    fn from_count(n: usize) -> Self {
        Ratio::from_integer(n as i128)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Mean of a slice, `None` when empty.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, v| acc + *v);
    Some(sum / T::from_count(values.len()))
}
