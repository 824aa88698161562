//! Patch labels to pixel masks, and dense-CRF refinement.

mod crf;
mod permutohedral;

use crate::error::{Error, Result};
use crate::tensor_io::{MaskSource, PixelMask};

pub use crf::{crf_marginals, crf_refine, crf_refine_with, CrfParams, PairwiseMode};
pub use permutohedral::PermutohedralLattice;

/// Replicate each patch label over its `patch_size x patch_size` block,
/// cropping the right/bottom blocks to the image.
pub fn patch_to_pixel(
    labels: &[u8],
    rows: usize,
    cols: usize,
    patch_size: usize,
    height: usize,
    width: usize,
    source: MaskSource,
) -> Result<PixelMask> {
    if labels.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} labels for a {rows}x{cols} grid",
            labels.len()
        )));
    }
    if patch_size == 0 || height.div_ceil(patch_size) != rows || width.div_ceil(patch_size) != cols {
        return Err(Error::shape(format!(
            "{rows}x{cols} grid with patch size {patch_size} does not tile a {height}x{width} image"
        )));
    }
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let r = y / patch_size;
        data.extend((0..width).map(|x| labels[r * cols + x / patch_size]));
    }
    PixelMask::new(height, width, data, source)
}

/// Per-block majority vote back onto the patch grid; ties go to foreground.
pub fn downsample_majority(mask: &PixelMask, patch_size: usize) -> Result<(usize, usize, Vec<u8>)> {
    if patch_size == 0 {
        return Err(Error::Argument("patch size must be positive".into()));
    }
    let rows = mask.height.div_ceil(patch_size);
    let cols = mask.width.div_ceil(patch_size);
    let mut fg = vec![0usize; rows * cols];
    let mut total = vec![0usize; rows * cols];
    for y in 0..mask.height {
        let r = y / patch_size;
        for x in 0..mask.width {
            let idx = r * cols + x / patch_size;
            total[idx] += 1;
            fg[idx] += mask.get(y, x) as usize;
        }
    }
    let labels = fg
        .iter()
        .zip(&total)
        .map(|(&f, &t)| u8::from(2 * f >= t))
        .collect();
    Ok((rows, cols, labels))
}
