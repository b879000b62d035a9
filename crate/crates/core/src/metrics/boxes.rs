use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned pixel box with `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box ({x1}, {y1}, {x2}, {y2}) has non-finite coordinates"
            )));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub(crate) fn cmp_coords(&self, other: &Self) -> Ordering {
        self.coords()
            .iter()
            .zip(other.coords().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union; 0 for disjoint or edge-touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: BBox,
}

impl GtBox {
    pub fn new(image_id: impl Into<String>, class_id: u32, bbox: BBox) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetBox {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    pub bbox: BBox,
}

impl DetBox {
    pub fn new(image_id: impl Into<String>, class_id: u32, score: f64, bbox: BBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!(
                "detection score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        })
    }

    /// Total order used everywhere detections are ranked: score descending,
    /// then image id, then box coordinates. Identical detections compare
    /// equal and are interchangeable.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.image_id.cmp(&other.image_id))
            .then_with(|| self.class_id.cmp(&other.class_id))
            .then_with(|| self.bbox.cmp_coords(&other.bbox))
    }
}
