use ndarray::{Array2, Zip};

use crate::error::{ensure, Result};

const HU_FLOOR: f32 = -1000.0;
const HU_SCALE: f32 = 3000.0;

/// Clips CT values below -1000 HU and maps them to roughly `[0, 1]`.
///
/// Values above 2000 HU map above 1; no upper clipping is applied.
pub fn preprocess_ct(image: &Array2<f32>) -> Array2<f32> {
    image.mapv(|v| (v.max(HU_FLOOR) - HU_FLOOR) / HU_SCALE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleKind {
    /// Block mean.
    Image,
    /// Block max; keeps masks binary and thin structures visible.
    Mask,
}

/// Reduces both axes by an integer `factor`.
pub fn downsample(grid: &Array2<f32>, factor: usize, kind: DownsampleKind) -> Result<Array2<f32>> {
    let (h, w) = grid.dim();
    ensure!(factor >= 1, InvalidInput, "downsampling factor must be >= 1");
    ensure!(
        h % factor == 0 && w % factor == 0,
        Shape,
        "{h}x{w} is not divisible by {factor}"
    );
    let mut out = Array2::zeros((h / factor, w / factor));
    let area = (factor * factor) as f32;
    Zip::from(&mut out)
        .and(grid.exact_chunks((factor, factor)))
        .for_each(|o, block| {
            *o = match kind {
                DownsampleKind::Image => block.sum() / area,
                DownsampleKind::Mask => block.fold(f32::NEG_INFINITY, |a, &b| a.max(b)),
            }
        });
    Ok(out)
}

/// [`downsample`] for `u8` masks.
pub fn downsample_mask(mask: &Array2<u8>, factor: usize) -> Result<Array2<u8>> {
    let as_f = mask.mapv(f32::from);
    Ok(downsample(&as_f, factor, DownsampleKind::Mask)?.mapv(|v| v as u8))
}
