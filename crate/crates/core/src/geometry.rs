//! Axis-aligned boxes in normalized image coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed axis-aligned box with corners in `[0, 1]`.
///
/// Serialized as a 4-element array `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let bad = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(bad("coordinate outside [0, 1]"));
        }
        if x_min > x_max || y_min > y_max {
            return Err(bad("min corner exceeds max corner"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other`; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Box2D) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Box2D::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Intersection over union. Two boxes whose union has zero area score 0.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Same as [`iou`] but validates raw corner arrays first.
pub fn iou_checked(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
    Ok(iou(&Box2D::try_from(a)?, &Box2D::try_from(b)?))
}

/// How a box prediction is converted into a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxVariant {
    /// Reward is the IoU itself.
    Plain,
    /// IoU plus 0.5 when IoU is strictly above 0.5, capped at 1.
    #[default]
    Bonus,
}

pub fn bbox_reward(pred: &Box2D, gt: &Box2D, variant: BoxVariant) -> f64 {
    bonus_from_iou(iou(pred, gt), variant)
}

pub fn bonus_from_iou(iou: f64, variant: BoxVariant) -> f64 {
    match variant {
        BoxVariant::Plain => iou,
        BoxVariant::Bonus if iou > 0.5 => (iou + 0.5).min(1.0),
        BoxVariant::Bonus => iou,
    }
}
