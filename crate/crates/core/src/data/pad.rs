//! Band harmonization: cubes from narrower modalities are zero-padded up
//! to the registry-wide maximum so one embedding matrix serves them all.
//! Zero planes contribute nothing to the embedding and send exactly zero
//! gradient into the weight rows for the padded bands.

use super::types::HsiCube;
use crate::error::{Error, Result};

/// Copy bands 0..B unchanged and append all-zero planes up to `b_max`.
pub fn pad_bands(cube: &HsiCube, b_max: usize) -> Result<HsiCube> {
    let b = cube.bands();
    if b > b_max {
        return Err(Error::Domain(format!(
            "cannot pad {b} bands down to {b_max}; padding only extends"
        )));
    }
    if b == b_max {
        return Ok(cube.clone());
    }
    let mut out = HsiCube::zeros(b_max, cube.height(), cube.width());
    for band in 0..b {
        out.plane_mut(band).copy_from_slice(cube.plane(band));
    }
    Ok(out)
}
