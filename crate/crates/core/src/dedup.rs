//! Intersection-over-union and the duplicate filter that merges window
//! re-detections with the first-pass detections.

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::detector::{Detection, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    /// Two detections are the same object when their IoU is strictly above this.
    pub theta: f64,
    /// Only detections of the same class can match each other.
    pub class_aware: bool,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            theta: 0.1,
            class_aware: true,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.theta > 0.0 && self.theta < 1.0 {
            Ok(())
        } else {
            Err(format!("iou threshold {} outside (0, 1)", self.theta))
        }
    }

    fn comparable(&self, x: &Detection, y: &Detection) -> bool {
        !self.class_aware || x.class_id == y.class_id
    }

    /// Whether `x` and `y` would be judged the same object.
    pub fn matches(&self, x: &Detection, y: &Detection) -> bool {
        self.comparable(x, y) && iou(x, y) > self.theta
    }
}

fn intersection(x: &Detection, y: &Detection) -> f64 {
    let w = x.c.min(y.c) - x.a.max(y.a);
    let h = x.d.min(y.d) - x.b.max(y.b);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union; 0 for disjoint boxes and for two empty boxes.
pub fn iou(x: &Detection, y: &Detection) -> f64 {
    let inter = intersection(x, y);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (x.area() + y.area() - inter)
}

/// [`iou`] in exact rational arithmetic over the (exactly representable)
/// floating-point corners.
pub fn iou_exact(x: &Detection, y: &Detection) -> BigRational {
    let r = |v: f64| BigRational::from_float(v).expect("finite coordinate");
    let zero = BigRational::zero();
    let area = |d: &Detection| (r(d.c) - r(d.a)) * (r(d.d) - r(d.b));
    let w = r(x.c.min(y.c)) - r(x.a.max(y.a));
    let h = r(x.d.min(y.d)) - r(x.b.max(y.b));
    if w <= zero || h <= zero {
        return zero;
    }
    let inter = w * h;
    let union = area(x) + area(y) - &inter;
    inter / union
}

/// Convenience for callers that only need the float value of an exact ratio.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Greedy global merge. Every candidate from `base` and `windows` is ranked
/// by [`Detection::rank_cmp`]; a candidate is accepted when it does not
/// match any already accepted detection. The result is sorted by
/// descending score and does not depend on the order of `windows`.
pub fn merge(base: &DetectionSet, windows: &[DetectionSet], policy: &MergePolicy) -> DetectionSet {
    let mut pool: Vec<Detection> = base
        .items
        .iter()
        .chain(windows.iter().flat_map(|w| w.items.iter()))
        .copied()
        .collect();
    pool.sort_by(Detection::rank_cmp);
    let mut accepted: Vec<Detection> = Vec::with_capacity(pool.len());
    for cand in pool {
        if !accepted.iter().any(|kept| policy.matches(kept, &cand)) {
            accepted.push(cand);
        }
    }
    DetectionSet::new(base.frame_id.clone(), accepted)
}

/// Sizes of the first-pass and merged sets.
pub fn match_counts(base: &DetectionSet, merged: &DetectionSet) -> (usize, usize) {
    (base.len(), merged.len())
}
