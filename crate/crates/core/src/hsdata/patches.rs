use super::cube::{HyperCube, MaskRaster, Sample};
use crate::error::{Error, Result};

/// Window start offsets along one axis. The last window is anchored to the
/// far edge, so it may overlap its predecessor.
pub fn window_starts(size: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::Precondition("patch and stride must be positive".into()));
    }
    if patch > size {
        return Err(Error::Precondition(format!(
            "patch {patch} larger than image extent {size}"
        )));
    }
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|s| s + patch <= size).collect();
    let last = *starts.last().unwrap();
    if last + patch < size {
        starts.push(size - patch);
    }
    Ok(starts)
}

/// Row-major `(top, left)` origins of all windows over an `h x w` image.
pub fn tile_origins(h: usize, w: usize, patch: (usize, usize), stride: usize) -> Result<Vec<(usize, usize)>> {
    let rows = window_starts(h, patch.0, stride)?;
    let cols = window_starts(w, patch.1, stride)?;
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

/// Sliding-window `patch x patch` crops of a sample's cube and mask.
pub fn extract_patches(
    sample: &Sample,
    patch: usize,
    stride: usize,
) -> Result<Vec<(HyperCube, MaskRaster)>> {
    let (h, w) = (sample.cube.height(), sample.cube.width());
    tile_origins(h, w, (patch, patch), stride)?
        .into_iter()
        .map(|(r, c)| {
            Ok((
                sample.cube.crop(r, c, patch, patch)?,
                sample.mask.crop(r, c, patch, patch)?,
            ))
        })
        .collect()
}
