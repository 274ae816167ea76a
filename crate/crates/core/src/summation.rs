//! Compensated and pairwise summation with a fixed evaluation order.
//!
//! Every reduction in the crate runs in a fixed sequential order per output
//! entry, so results are bitwise identical regardless of the thread count.

use std::ops::{Add, Sub};

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum<T> {
    sum: T,
    compensation: T,
}

impl<T> KahanSum<T>
where
    T: Copy + Default + Add<Output = T> + Sub<Output = T>,
{
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: T) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum
    }
}

impl<T> FromIterator<T> for KahanSum<T>
where
    T: Copy + Default + Add<Output = T> + Sub<Output = T>,
{
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation; blocks of 32 are summed sequentially.
pub fn pairwise_sum<T>(values: &[T]) -> T
where
    T: Copy + Default + Add<Output = T>,
{
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(T::default(), |a, &b| a + b);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(x)` over a slice, without materializing the mapped values.
pub fn pairwise_map_sum<S, F>(values: &[S], f: &F) -> f64
where
    F: Fn(&S) -> f64,
{
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().map(f).fold(0.0, |a, b| a + b);
    }
    let mid = values.len() / 2;
    pairwise_map_sum(&values[..mid], f) + pairwise_map_sum(&values[mid..], f)
}
