//! Generic floating-point scalar for the kinetic solver.
//!
//! All numerics are written against [`Real`] so the same code runs in f32 or
//! f64. The shipped binary and the acceptance suite instantiate f64; f32 is
//! exercised by smoke tests only.

use std::fmt;
use std::iter::Sum;
use std::ops::AddAssign;

/// Floating-point scalar: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert an f64 constant into this scalar type.
    #[inline]
    fn c(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite constant")
    }

    /// Lossy view as f64, for reporting and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum with pairwise (cascade) reduction in slice order.
///
/// Used for every physics reduction so results do not depend on the number of
/// workers: parallel callers produce per-chunk slices in a fixed layout and
/// reduce them through this function.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= 32 {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Dot product of two 3-vectors.
#[inline]
pub fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Euclidean norm of a 3-vector.
#[inline]
pub fn norm<T: Real>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

/// Squared Euclidean norm of a 3-vector.
#[inline]
pub fn norm_sq<T: Real>(a: [T; 3]) -> T {
    dot(a, a)
}

/// a - b componentwise.
#[inline]
pub fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// a + s*b componentwise.
#[inline]
pub fn add_scaled<T: Real>(a: [T; 3], s: T, b: [T; 3]) -> [T; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

/// Deterministic orthonormal frame (e1, e2) perpendicular to a unit vector.
///
/// The construction depends only on the input components, so equal inputs give
/// bit-equal frames on every call.
pub fn tangent_frame<T: Real>(n: [T; 3]) -> ([T; 3], [T; 3]) {
    // Cross with the coordinate axis of smallest |component| for stability.
    let a = {
        let (x, y, z) = (n[0].abs(), n[1].abs(), n[2].abs());
        if x <= y && x <= z {
            [T::one(), T::zero(), T::zero()]
        } else if y <= z {
            [T::zero(), T::one(), T::zero()]
        } else {
            [T::zero(), T::zero(), T::one()]
        }
    };
    let mut e1 = [
        a[1] * n[2] - a[2] * n[1],
        a[2] * n[0] - a[0] * n[2],
        a[0] * n[1] - a[1] * n[0],
    ];
    let inv = T::one() / norm(e1);
    for c in &mut e1 {
        *c = *c * inv;
    }
    let e2 = [
        n[1] * e1[2] - n[2] * e1[1],
        n[2] * e1[0] - n[0] * e1[2],
        n[0] * e1[1] - n[1] * e1[0],
    ];
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn tangent_frame_is_orthonormal() {
        let n = [0.6_f64, 0.8, 0.0];
        let (e1, e2) = tangent_frame(n);
        assert!(dot(e1, n).abs() < 1e-15);
        assert!(dot(e2, n).abs() < 1e-15);
        assert!(dot(e1, e2).abs() < 1e-15);
        assert!((norm(e1) - 1.0).abs() < 1e-15);
        assert!((norm(e2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn works_in_f32() {
        let n = [0.0_f32, 0.0, 1.0];
        let (e1, _) = tangent_frame(n);
        assert!((norm(e1) - 1.0).abs() < 1e-6);
    }
}
