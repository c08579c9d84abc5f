//! Adversarial segmentation of lung fields and heart in chest radiographs.
//!
//! A fully convolutional segmentor is trained jointly with a critic that
//! tells ground-truth masks apart from predicted ones. The crate carries
//! everything needed to run that pipeline on a CPU:
//!
//! * [`tensor`] and [`ops`]: dense tensors plus forward/backward kernels for
//!   the fixed layer vocabulary, and [`optim`] for Adam.
//! * [`model`]: the segmentor and critic schedules, parameter bookkeeping and
//!   checkpoints.
//! * [`train`]: losses, per-player objectives and the alternating trainer.
//! * [`data`]: raw/PNG loaders, resizing, normalization and splits.
//! * [`eval`]: mask post-processing, IoU/Dice and reports.
//!
//! Heavy loops run on rayon when the `parallel` feature is on (default).
//! Every reduction uses a fixed chunking, so results do not depend on the
//! number of threads.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod ops;
pub mod optim;
pub mod par;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Result, ScanError};
pub use tensor::{Scalar, Tensor};

/// Number of output classes: left lung, right lung, heart, background.
pub const NUM_CLASSES: usize = 4;

/// Channel order of every mask tensor.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["left_lung", "right_lung", "heart", "background"];

pub const LEFT_LUNG: usize = 0;
pub const RIGHT_LUNG: usize = 1;
pub const HEART: usize = 2;
pub const BACKGROUND: usize = 3;
