//! Scalar abstraction shared by every numeric kernel in the workspace.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point element type for attention weights, maps and logits.
///
/// Implemented for `f32` (the on-disk trace precision) and `f64` (used where
/// exact cancellation matters, e.g. sink-invariance checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only if the type cannot represent
    /// finite values at all.
    #[inline]
    fn of(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("scalar conversion from f64")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn count(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Index of the largest value; the lowest index wins ties. `None` on empty input.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Indices of the `k` largest values in descending order, ties broken by
/// ascending index.
pub fn top_k_indices<T: Scalar>(values: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(values.len()));
    order
}

/// Euclidean norm.
pub fn l2_norm<T: Scalar>(values: &[T]) -> T {
    values.iter().map(|&v| v * v).sum::<T>().sqrt()
}
