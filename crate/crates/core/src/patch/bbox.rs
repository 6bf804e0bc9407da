use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_confidence() -> f64 {
    1.0
}

/// Axis-aligned box in pixel coordinates. Ground-truth boxes carry
/// confidence 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, confidence: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    /// Ground-truth box (confidence 1).
    pub fn truth(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        Self::new(x_min, y_min, x_max, y_max, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.coords();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Contract(format!("box {coords:?} has non-finite coordinates")));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::Contract(format!(
                "box {coords:?} needs x_min < x_max and y_min < y_max"
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Contract(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 for disjoint or merely touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::truth(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn identical_is_one() {
        assert_eq!(iou(&b(1.0, 2.0, 4.0, 7.0), &b(1.0, 2.0, 4.0, 7.0)), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)), 0.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn one_seventh() {
        // overlap 1×1, union 4 + 4 − 1
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BoundingBox::truth(2.0, 0.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, 1.5).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }
}
