//! RGB-to-spectral embedding inflation.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Expand a 3-channel patch embedding to `bands` channels.
///
/// Band b borrows the weight rows of source channel b mod 3, scaled by
/// the reciprocal of how many bands share that channel. A cube whose
/// band-b plane replicates RGB channel b mod 3 then embeds to exactly
/// the tokens the RGB weights produce.
pub fn inflate_embedding(e_rgb: &DenseMatrix, bands: usize) -> Result<DenseMatrix> {
    if e_rgb.rows() % 3 != 0 || e_rgb.rows() == 0 {
        return Err(Error::Config(format!(
            "embedding with {} rows is not a 3-channel patch projection",
            e_rgb.rows()
        )));
    }
    if bands == 0 {
        return Err(Error::Config("cannot inflate to 0 bands".into()));
    }
    let p2 = e_rgb.rows() / 3;
    let mut share = [0usize; 3];
    for b in 0..bands {
        share[b % 3] += 1;
    }
    let mut out = DenseMatrix::zeros(bands * p2, e_rgb.cols());
    for b in 0..bands {
        let src = b % 3;
        let scale = 1.0 / share[src] as f64;
        for r in 0..p2 {
            let dst_row = out.row_mut(b * p2 + r);
            for (dst, &w) in dst_row.iter_mut().zip(e_rgb.row(src * p2 + r)) {
                *dst = w * scale;
            }
        }
    }
    Ok(out)
}
