//! Scalar abstractions shared by the numeric modules.
//!
//! Interval arithmetic and the grounding reward only need field operations
//! and an ordering, so they run on exact rationals as well as floats.
//! Advantage standardization and the clipped objective need `sqrt`/`exp`
//! and are restricted to [`Real`].

use num_traits::{Float, Num};
use std::fmt::Debug;

/// Ordered field element: f32, f64, or an exact rational.
pub trait Scalar: Num + PartialOrd + Copy + Debug {
    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn half() -> Self {
        Self::one() / Self::two()
    }

    /// `n` as a scalar, built by binary expansion so no cast trait is needed.
    fn from_count(n: u64) -> Self {
        let mut acc = Self::zero();
        let mut unit = Self::one();
        let mut rest = n;
        while rest > 0 {
            if rest & 1 == 1 {
                acc = acc + unit;
            }
            unit = unit + unit;
            rest >>= 1;
        }
        acc
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl<T> Scalar for T where T: Num + PartialOrd + Copy + Debug {}

/// Floating point scalar (f32 or f64).
pub trait Real: Scalar + Float {}

impl<T> Real for T where T: Scalar + Float {}
