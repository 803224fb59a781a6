//! Axis-aligned crop-and-resample windows.
//!
//! Template and search regions are square windows in frame coordinates,
//! resampled bilinearly to a fixed pixel size. Samples outside the frame
//! read as zero. False-color and spectral cubes of a frame are cropped
//! with the identical window so their patches stay aligned.

use crate::data::HsiCube;
use crate::error::{Error, Result};
use crate::geom::Bbox;

/// A square frame-space window and its output resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub out: usize,
}

impl CropWindow {
    /// Window centered on `anchor` whose side is `scale` times the box
    /// max-side, never smaller than one pixel.
    pub fn around(anchor: &Bbox, scale: f64, out: usize) -> Self {
        let (cx, cy) = anchor.center();
        CropWindow { cx, cy, side: (scale * anchor.max_side()).max(1.0), out }
    }

    fn origin(&self) -> (f64, f64) {
        (self.cx - self.side / 2.0, self.cy - self.side / 2.0)
    }

    /// Pixels of the output raster per frame pixel.
    pub fn zoom(&self) -> f64 {
        self.out as f64 / self.side
    }

    /// Map a frame-space box into crop pixels.
    pub fn to_crop(&self, b: &Bbox) -> Bbox {
        let (ox, oy) = self.origin();
        let k = self.zoom();
        Bbox::new((b.x - ox) * k, (b.y - oy) * k, b.w * k, b.h * k)
    }

    /// Map a crop-space box back into frame pixels.
    pub fn to_frame(&self, b: &Bbox) -> Bbox {
        let (ox, oy) = self.origin();
        let k = self.zoom();
        Bbox::new(b.x / k + ox, b.y / k + oy, b.w / k, b.h / k)
    }

    /// Bilinear resample of every band; zero outside the frame.
    pub fn extract(&self, cube: &HsiCube) -> Result<HsiCube> {
        if self.out == 0 || !(self.side > 0.0) || !self.side.is_finite() {
            return Err(Error::Config(format!(
                "degenerate crop window (side {}, out {})",
                self.side, self.out
            )));
        }
        let (ox, oy) = self.origin();
        let step = self.side / self.out as f64;
        let (h, w) = (cube.height() as isize, cube.width() as isize);
        let mut out = HsiCube::zeros(cube.bands(), self.out, self.out);
        let sample = |plane: &[f32], fy: f64, fx: f64| -> f64 {
            let (x0, y0) = (fx.floor(), fy.floor());
            let (tx, ty) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let at = |y: isize, x: isize| -> f64 {
                if y < 0 || y >= h || x < 0 || x >= w {
                    0.0
                } else {
                    plane[(y * w + x) as usize] as f64
                }
            };
            (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1))
        };
        for b in 0..cube.bands() {
            let plane = cube.plane(b);
            for py in 0..self.out {
                let fy = oy + (py as f64 + 0.5) * step - 0.5;
                for px in 0..self.out {
                    let fx = ox + (px as f64 + 0.5) * step - 0.5;
                    out.set(b, py, px, sample(plane, fy, fx) as f32);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(bands: usize, h: usize, w: usize) -> HsiCube {
        let data: Vec<f32> = (0..bands * h * w).map(|i| (i % 97) as f32).collect();
        HsiCube::from_data(bands, h, w, data).unwrap()
    }

    #[test]
    fn aligned_window_is_the_identity() {
        let cube = ramp(2, 8, 8);
        let win = CropWindow { cx: 4.0, cy: 4.0, side: 8.0, out: 8 };
        assert_eq!(win.extract(&cube).unwrap(), cube);
    }

    #[test]
    fn window_outside_the_frame_reads_zero() {
        let cube = ramp(1, 8, 8);
        let win = CropWindow { cx: 100.0, cy: 100.0, side: 8.0, out: 4 };
        let crop = win.extract(&cube).unwrap();
        assert!(crop.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsampling_a_constant_stays_constant() {
        let cube = HsiCube::from_data(1, 4, 4, vec![3.0; 16]).unwrap();
        let win = CropWindow { cx: 2.0, cy: 2.0, side: 2.0, out: 8 };
        let crop = win.extract(&cube).unwrap();
        assert!(crop.as_slice().iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn box_mapping_round_trips() {
        let win = CropWindow::around(&Bbox::new(10.0, 20.0, 8.0, 6.0), 4.0, 128);
        assert_eq!(win.side, 32.0);
        let b = Bbox::new(12.0, 21.0, 5.0, 4.0);
        let back = win.to_frame(&win.to_crop(&b));
        assert!((back.x - b.x).abs() < 1e-9);
        assert!((back.y - b.y).abs() < 1e-9);
        assert!((back.w - b.w).abs() < 1e-9);
        assert!((back.h - b.h).abs() < 1e-9);
    }

    #[test]
    fn tiny_boxes_still_get_a_window() {
        let win = CropWindow::around(&Bbox::new(5.0, 5.0, 0.0, 0.0), 4.0, 64);
        assert_eq!(win.side, 1.0);
    }
}
