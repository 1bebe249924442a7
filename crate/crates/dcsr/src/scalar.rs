//! Scalar abstraction so the core math runs on any IEEE float width.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the numeric core.
///
/// Implemented by `f32` and `f64`; the crate-root aliases pick concrete
/// widths for training (`f64`) and index storage (`f32`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// Inner product of two equal-length slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Numerically stable softmax (max-subtraction). Errors on NaN input.
pub fn softmax<S: Scalar>(scores: &[S]) -> crate::Result<Vec<S>> {
    if scores.is_empty() {
        return Err(crate::Error::Numerical {
            context: "softmax of empty score list".into(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(crate::Error::Numerical {
            context: "softmax input contains NaN".into(),
        });
    }
    let max = scores.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: S = exps.iter().cloned().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
