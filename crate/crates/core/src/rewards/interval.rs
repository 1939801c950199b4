//! Temporal intervals, IoU, and the soft + hard grounding reward.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("interval start is after its end (or not comparable)")]
pub struct IntervalError;

/// A closed time range in seconds with `start_s <= end_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawInterval<T>", bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Interval<T> {
    pub start_s: T,
    pub end_s: T,
}

#[derive(Deserialize)]
struct RawInterval<T> {
    start_s: T,
    end_s: T,
}

impl<T: Scalar> TryFrom<RawInterval<T>> for Interval<T> {
    type Error = IntervalError;
    fn try_from(raw: RawInterval<T>) -> Result<Self, Self::Error> {
        Self::new(raw.start_s, raw.end_s)
    }
}

impl<T: Scalar> Interval<T> {
    pub fn new(start_s: T, end_s: T) -> Result<Self, IntervalError> {
        // written as a negation so NaN endpoints are rejected too
        if !(start_s <= end_s) {
            return Err(IntervalError);
        }
        Ok(Self { start_s, end_s })
    }

    pub fn length(&self) -> T {
        self.end_s - self.start_s
    }

    pub fn is_degenerate(&self) -> bool {
        self.start_s == self.end_s
    }

    pub fn intersection_length(&self, other: &Self) -> T {
        let lo = self.start_s.max_of(other.start_s);
        let hi = self.end_s.min_of(other.end_s);
        if hi > lo {
            hi - lo
        } else {
            T::zero()
        }
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }
}

/// Intersection over union of two intervals, measured in seconds.
///
/// When both intervals have zero length the union is empty; that case is
/// defined as 0.
pub fn temporal_iou<T: Scalar>(a: &Interval<T>, b: &Interval<T>) -> T {
    let inter = a.intersection_length(b);
    let union = a.length() + b.length() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// The two parts of the grounding reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingTerms<T> {
    /// The IoU itself, in `[0, 1]`.
    pub soft: T,
    /// `0.5` when the IoU is positive, else `0`.
    pub hard: T,
}

impl<T: Scalar> GroundingTerms<T> {
    pub fn between(predicted: &Interval<T>, target: &Interval<T>) -> Self {
        let iou = temporal_iou(predicted, target);
        let hard = if iou > T::zero() { T::half() } else { T::zero() };
        Self { soft: iou, hard }
    }

    pub fn total(&self) -> T {
        self.soft + self.hard
    }
}

/// `IoU + 0.5 * [IoU > 0]`, in `[0, 1.5]`.
pub fn grounding_reward<T: Scalar>(predicted: &Interval<T>, target: &Interval<T>) -> T {
    GroundingTerms::between(predicted, target).total()
}
