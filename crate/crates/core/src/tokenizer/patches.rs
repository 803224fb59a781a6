//! Non-overlapping patch extraction.

use crate::data::HsiCube;
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Image cut into a row-major grid of square patches, pre-flattened for
/// embedding: row m holds patch m in channel-major, then row, then
/// column order. That flatten order is part of the checkpoint contract.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    data: DenseMatrix,
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    patch: usize,
}

impl PatchSet {
    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    /// M x (C.P.P) matrix, one flattened patch per row.
    pub fn matrix(&self) -> &DenseMatrix {
        &self.data
    }

    /// Flattened values of patch m (channel-major, row, column).
    pub fn patch(&self, m: usize) -> &[f64] {
        self.data.row(m)
    }

    /// Reassemble the source cube; exact inverse of extraction.
    pub fn reconstruct(&self) -> HsiCube {
        let (h, w) = (self.grid_h * self.patch, self.grid_w * self.patch);
        let mut cube = HsiCube::zeros(self.channels, h, w);
        let p = self.patch;
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let row = self.patch(gy * self.grid_w + gx);
                for c in 0..self.channels {
                    for py in 0..p {
                        for px in 0..p {
                            let v = row[(c * p + py) * p + px];
                            cube.set(c, gy * p + py, gx * p + px, v as f32);
                        }
                    }
                }
            }
        }
        cube
    }
}

/// Cut `cube` into non-overlapping P x P patches in row-major grid order.
pub fn extract_patches(cube: &HsiCube, p: usize) -> Result<PatchSet> {
    let (h, w, c) = (cube.height(), cube.width(), cube.bands());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} does not tile into {p}x{p} patches"
        )));
    }
    let (grid_h, grid_w) = (h / p, w / p);
    let mut data = DenseMatrix::zeros(grid_h * grid_w, c * p * p);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let row = data.row_mut(gy * grid_w + gx);
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        row[(ch * p + py) * p + px] =
                            cube.get(ch, gy * p + py, gx * p + px) as f64;
                    }
                }
            }
        }
    }
    Ok(PatchSet { data, grid_h, grid_w, channels: c, patch: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_cube(c: usize, h: usize, w: usize) -> HsiCube {
        let data: Vec<f32> = (0..c * h * w).map(|i| i as f32).collect();
        HsiCube::from_data(c, h, w, data).unwrap()
    }

    #[test]
    fn patch_count_follows_grid() {
        let ps = extract_patches(&ramp_cube(3, 64, 64), 16).unwrap();
        assert_eq!(ps.count(), 16);
        assert_eq!((ps.grid_h(), ps.grid_w()), (4, 4));
        assert_eq!(ps.matrix().shape(), (16, 3 * 16 * 16));
    }

    #[test]
    fn single_patch_is_the_whole_image() {
        let cube = ramp_cube(2, 16, 16);
        let ps = extract_patches(&cube, 16).unwrap();
        assert_eq!(ps.count(), 1);
        // Channel-major flatten of the full image is the cube's own layout.
        let expect: Vec<f64> = cube.as_slice().iter().map(|&v| v as f64).collect();
        assert_eq!(ps.patch(0), &expect[..]);
    }

    #[test]
    fn non_divisible_sizes_name_the_shapes() {
        let err = extract_patches(&ramp_cube(1, 63, 64), 16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("63") && msg.contains("64") && msg.contains("16"), "{msg}");
    }

    #[test]
    fn reconstruction_inverts_extraction() {
        let cube = ramp_cube(3, 32, 48);
        let ps = extract_patches(&cube, 16).unwrap();
        assert_eq!(ps.reconstruct(), cube);
    }
}
