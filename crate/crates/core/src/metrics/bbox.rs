//! Box overlap and center distance.

use crate::geom::Bbox;

/// Intersection over union; 0 when the union is empty. Negative sizes
/// count as empty boxes.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let area = |v: &Bbox| v.w.max(0.0) * v.h.max(0.0);
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Euclidean distance between box centers, in pixels.
pub fn center_error(a: &Bbox, b: &Bbox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}
