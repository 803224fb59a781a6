//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

/// Top-left anchored box. Result files and ground-truth sidecars store
/// boxes as `[x, y, w, h]` arrays via the `[f64; 4]` conversions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Bbox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Bbox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Bbox { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    /// Corner form (x1, y1, x2, y2).
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x, self.y, self.x + self.w, self.y + self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn max_side(&self) -> f64 {
        self.w.max(self.h)
    }

    /// Shrink to fit and translate into `[0, width] x [0, height]`.
    pub fn clamp_to_frame(&self, width: f64, height: f64) -> Bbox {
        let w = self.w.min(width).max(0.0);
        let h = self.h.min(height).max(0.0);
        let x = self.x.clamp(0.0, width - w);
        let y = self.y.clamp(0.0, height - h);
        Bbox { x, y, w, h }
    }

    /// True if the box has no overlap with `[0, width] x [0, height]`.
    pub fn outside_frame(&self, width: f64, height: f64) -> bool {
        self.x >= width || self.y >= height || self.x + self.w <= 0.0 || self.y + self.h <= 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

impl From<Bbox> for [f64; 4] {
    fn from(b: Bbox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl From<[f64; 4]> for Bbox {
    fn from(a: [f64; 4]) -> Self {
        Bbox { x: a[0], y: a[1], w: a[2], h: a[3] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_roundtrip() {
        let b = Bbox::from_center(10.0, 20.0, 4.0, 6.0);
        assert_eq!(b, Bbox::new(8.0, 17.0, 4.0, 6.0));
        assert_eq!(b.center(), (10.0, 20.0));
    }

    #[test]
    fn clamp_moves_box_inside() {
        let b = Bbox::new(-5.0, 95.0, 10.0, 10.0).clamp_to_frame(100.0, 100.0);
        assert_eq!(b, Bbox::new(0.0, 90.0, 10.0, 10.0));
        let big = Bbox::new(10.0, 10.0, 300.0, 50.0).clamp_to_frame(100.0, 100.0);
        assert_eq!(big.w, 100.0);
        assert_eq!(big.x, 0.0);
    }

    #[test]
    fn outside_detection() {
        assert!(Bbox::new(120.0, 0.0, 10.0, 10.0).outside_frame(100.0, 100.0));
        assert!(Bbox::new(-10.0, 0.0, 10.0, 10.0).outside_frame(100.0, 100.0));
        assert!(!Bbox::new(95.0, 95.0, 10.0, 10.0).outside_frame(100.0, 100.0));
    }

    #[test]
    fn serializes_as_array() {
        let s = serde_json::to_string(&Bbox::new(1.0, 2.0, 3.0, 4.0)).unwrap();
        assert_eq!(s, r#"{"x":1.0,"y":2.0,"w":3.0,"h":4.0}"#);
    }
}
