//! Segmentation of multiple structures from incompletely annotated images.
//!
//! The crate covers the whole experimental pipeline:
//!
//! * [`data`]: synthetic multi-structure datasets, on-disk manifests and CT preprocessing.
//! * [`losses`]: soft Dice, cross-entropy and the availability-masked (data-adaptive)
//!   losses, including the voxel- and slice-weighted variants.
//! * [`model`]: a U-Net with batch normalization, spatial dropout and one sigmoid
//!   output per structure, with hand-written backpropagation.
//! * [`training`]: optimizers, the training loop, incremental extension, the
//!   teacher-student baseline and random hyper-parameter search.
//! * [`metrics`]: DSC, HD95, RAVD and ASSD with per-structure aggregation.
//! * [`stats`]: Friedman test and Nemenyi post-hoc comparison of methods.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod training;

pub use data::{Dataset, ShapeKind, SliceSample, Split, SynthConfig};
pub use error::{Error, Result};
pub use losses::{BatchPrediction, ClassWeightState, LossConfig, LossOutput, Weighting};
pub use metrics::{BinaryVolume, EvalReport};
pub use model::{Mode, Model, ModelSpec, Tensor};
pub use stats::{PairwiseVerdict, ScoreMatrix, Verdict};
pub use training::{LearningCurve, OptimizerKind, TrainConfig};
