//! Dataset ingestion: loaders, resampling, normalization, splits.
//!
//! The per-sample pipeline is fixed: decode, resize to the working
//! resolution, then normalize the image; masks are decoded, binarized,
//! resized, re-binarized and one-hot encoded with channel priority
//! left lung > right lung > heart > background.

mod assemble;
pub mod cache;
mod image_io;
pub mod jsrt;
mod manifest;
mod normalize;
mod resize;
mod sample;
pub mod split;
pub mod synthetic;

pub use assemble::{assemble_samples, discover, load_sample, LoadOptions, LoadReport, SampleFiles};
pub use image_io::{binarize, load_gray_image, load_mask, save_gray_png, save_rgb_png};
pub use jsrt::{decode_jsrt, load_jsrt_image, load_jsrt_image_with, Polarity};
pub use manifest::{DatasetChoice, DatasetManifest, ImageFormat, Source, DATA_ROOT_ENV, DEFAULT_RESOLUTION};
pub use normalize::{normalize_per_image, NORM_EPS};
pub use resize::{one_hot_priority, resize_bilinear, resize_masks, Alignment};
pub use sample::ImageSample;
pub use split::{make_split, DatasetSplit};
