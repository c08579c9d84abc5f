//! Mask post-processing, overlap metrics and evaluation reports.

mod mask;
mod metrics;
pub mod morphology;
mod overlay;
mod report;

pub use mask::{argmax_labels, argmax_mask, BinaryMask};
pub use metrics::{dice, iou, Confusion};
pub use morphology::{fill_holes, keep_largest, label_components, postprocess};
pub use overlay::{contour, render_overlay, write_overlay};
pub use report::{
    aggregate, bootstrap_se, evaluate, predicted_masks, score_sample, EvalOptions, MetricsReport, Predictor, Row,
    RowStats, SampleScores,
};
