//! U-Net with per-structure sigmoid outputs.
//!
//! Every level applies two `3×3 conv → batch norm → ReLU` blocks. The encoder
//! halves the resolution with 2×2 max pooling, the decoder doubles it with a
//! 2×2 stride-2 transposed convolution and concatenates the matching encoder
//! output. Spatial dropout follows every pooling and every concatenation.

mod checkpoint;
mod gemm;
mod layers;
mod tensor;
mod unet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use tensor::Tensor;
pub use unet::{Gradients, Model, Param, Tape};

pub const DEPTHS: [usize; 3] = [3, 4, 5];
pub const BASE_FILTERS: [usize; 4] = [8, 16, 32, 64];
pub const MAX_DROPOUT: f32 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub depth: usize,
    pub base_filters: usize,
    pub spatial_dropout_rate: f32,
    pub out_channels: usize,
    pub input_size: (usize, usize),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            depth: 3,
            base_filters: 8,
            spatial_dropout_rate: 0.0,
            out_channels: 1,
            input_size: (64, 64),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(DEPTHS.contains(&self.depth), InvalidConfig, "depth {} not in {DEPTHS:?}", self.depth);
        ensure!(
            BASE_FILTERS.contains(&self.base_filters),
            InvalidConfig,
            "base_filters {} not in {BASE_FILTERS:?}",
            self.base_filters
        );
        ensure!(
            (0.0..=MAX_DROPOUT).contains(&self.spatial_dropout_rate),
            InvalidConfig,
            "spatial_dropout_rate {} outside [0, {MAX_DROPOUT}]",
            self.spatial_dropout_rate
        );
        ensure!(self.out_channels >= 1, InvalidConfig, "out_channels must be at least 1");
        let div = 1 << (self.depth - 1);
        let (h, w) = self.input_size;
        ensure!(
            h > 0 && w > 0 && h % div == 0 && w % div == 0,
            InvalidConfig,
            "input size {h}x{w} not divisible by {div} (depth {})",
            self.depth
        );
        Ok(())
    }

    /// Filters at encoder level `level` (0 = full resolution).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Spatial size at the lowest level.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        let div = 1 << (self.depth - 1);
        (self.input_size.0 / div, self.input_size.1 / div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics, running statistics updated.
    Train,
    /// No dropout, running statistics.
    Eval,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_of_default_spec() {
        assert_eq!(ModelSpec::default().bottleneck_size(), (16, 16));
    }

    #[test]
    fn invalid_specs() {
        let ok = ModelSpec::default();
        ok.validate().unwrap();
        for bad in [
            ModelSpec { depth: 2, ..ok.clone() },
            ModelSpec { base_filters: 12, ..ok.clone() },
            ModelSpec { spatial_dropout_rate: 0.8, ..ok.clone() },
            ModelSpec { out_channels: 0, ..ok.clone() },
            ModelSpec { input_size: (62, 64), ..ok.clone() },
            ModelSpec { depth: 5, input_size: (40, 40), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
