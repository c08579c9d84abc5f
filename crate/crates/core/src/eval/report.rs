//! Dataset-level evaluation and report formatting.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageSample;
use crate::error::{Result, ScanError};
use crate::model::SegmentorNetwork;
use crate::ops::NormMode;
use crate::tensor::Tensor;
use crate::{HEART, LEFT_LUNG, RIGHT_LUNG};

use super::mask::{argmax_mask, BinaryMask};
use super::metrics::Confusion;
use super::morphology::postprocess;

/// Anything that maps a normalized `[H, W, 1]` image to `[H, W, 4]` class
/// probabilities.
pub trait Predictor: Sync {
    fn predict(&self, image: &Tensor) -> Result<Tensor>;
}

impl Predictor for SegmentorNetwork {
    fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self.forward_segment(image, NormMode::Eval)
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor> + Sync> Predictor for F {
    fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self(image)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Row {
    LeftLung,
    RightLung,
    BothLungs,
    Heart,
}

impl Row {
    pub const ALL: [Row; 4] = [Row::LeftLung, Row::RightLung, Row::BothLungs, Row::Heart];

    /// Label used in the table.
    pub fn title(self) -> &'static str {
        match self {
            Row::LeftLung => "Left Lung",
            Row::RightLung => "Right Lung",
            Row::BothLungs => "Both Lungs",
            Row::Heart => "Heart",
        }
    }

    /// Key prefix used in the key/value file.
    pub fn key(self) -> &'static str {
        match self {
            Row::LeftLung => "left_lung",
            Row::RightLung => "right_lung",
            Row::BothLungs => "both_lungs",
            Row::Heart => "heart",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub postprocess: bool,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { postprocess: true, resamples: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowStats {
    pub row: Row,
    pub iou: f64,
    pub iou_se: f64,
    pub dice: f64,
    pub dice_se: f64,
    /// Samples contributing to this row.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    pub id: String,
    /// `(row, iou, dice)` for every row the sample is scored on.
    pub scores: Vec<(Row, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<RowStats>,
    pub samples: usize,
    pub postprocess: bool,
    pub resamples: usize,
    pub seed: u64,
    pub per_sample: Vec<SampleScores>,
}

impl MetricsReport {
    pub fn row(&self, row: Row) -> Option<&RowStats> {
        self.rows.iter().find(|r| r.row == row)
    }
}

/// Per-class masks of a prediction, post-processed on request.
pub fn predicted_masks(probs: &Tensor, post: bool) -> Result<Vec<BinaryMask>> {
    let mut masks = argmax_mask(probs)?;
    if post {
        for k in [LEFT_LUNG, RIGHT_LUNG, HEART] {
            masks[k] = postprocess(&masks[k]);
        }
    }
    Ok(masks)
}

/// Scores a single prediction against its sample.
pub fn score_sample(sample: &ImageSample, masks: &[BinaryMask]) -> Result<SampleScores> {
    let truth = |k| BinaryMask::from_channel(&sample.mask, k);
    let mut scores = Vec::with_capacity(4);
    for (row, k) in [(Row::LeftLung, LEFT_LUNG), (Row::RightLung, RIGHT_LUNG)] {
        let c = Confusion::of(&masks[k], &truth(k)?)?;
        scores.push((row, c.iou(), c.dice()));
    }
    let both_pred = masks[LEFT_LUNG].union(&masks[RIGHT_LUNG])?;
    let both_truth = truth(LEFT_LUNG)?.union(&truth(RIGHT_LUNG)?)?;
    let c = Confusion::of(&both_pred, &both_truth)?;
    scores.push((Row::BothLungs, c.iou(), c.dice()));
    if sample.heart_annotated {
        let c = Confusion::of(&masks[HEART], &truth(HEART)?)?;
        scores.push((Row::Heart, c.iou(), c.dice()));
    }
    Ok(SampleScores { id: sample.id.clone(), scores })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation of the mean over `resamples` bootstrap draws.
pub fn bootstrap_se(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    let m = mean(&means);
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Aggregates per-sample scores. Each row gets its own seeded bootstrap
/// stream, so adding a row never changes the others.
pub fn aggregate(per_sample: Vec<SampleScores>, options: &EvalOptions) -> Result<MetricsReport> {
    if per_sample.is_empty() {
        return Err(ScanError::Config("evaluation set is empty".into()));
    }
    let mut rows = Vec::new();
    for (ri, row) in Row::ALL.into_iter().enumerate() {
        let (ious, dices): (Vec<f64>, Vec<f64>) = per_sample
            .iter()
            .filter_map(|s| s.scores.iter().find(|(r, _, _)| *r == row).map(|&(_, i, d)| (i, d)))
            .unzip();
        if ious.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(2 * ri as u64);
        let iou_se = bootstrap_se(&ious, options.resamples, &mut rng);
        rng.set_stream(2 * ri as u64 + 1);
        let dice_se = bootstrap_se(&dices, options.resamples, &mut rng);
        rows.push(RowStats { row, iou: mean(&ious), iou_se, dice: mean(&dices), dice_se, count: ious.len() });
    }
    Ok(MetricsReport {
        rows,
        samples: per_sample.len(),
        postprocess: options.postprocess,
        resamples: options.resamples,
        seed: options.seed,
        per_sample,
    })
}

/// Predicts every sample, scores it and aggregates.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[ImageSample],
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(ScanError::Config("evaluation set is empty".into()));
    }
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = predictor.predict(&s.image)?;
        let masks = predicted_masks(&probs, options.postprocess)?;
        per_sample.push(score_sample(s, &masks)?);
    }
    aggregate(per_sample, options)
}

impl MetricsReport {
    /// Aligned table in the layout of the published results.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} images; post-processing {}; ± = bootstrap standard error over images ({} resamples, seed {})",
            self.samples,
            if self.postprocess { "on" } else { "off" },
            self.resamples,
            self.seed
        );
        let _ = writeln!(out, "{:<12} {:>17} {:>17} {:>5}", "", "IoU", "Dice", "n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>8.2}% ±{:>5.2}% {:>8.2}% ±{:>5.2}% {:>5}",
                r.row.title(),
                100.0 * r.iou,
                100.0 * r.iou_se,
                100.0 * r.dice,
                100.0 * r.dice_se,
                r.count
            );
        }
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "postprocess={}", self.postprocess);
        let _ = writeln!(out, "uncertainty=bootstrap_standard_error");
        let _ = writeln!(out, "bootstrap_resamples={}", self.resamples);
        let _ = writeln!(out, "bootstrap_seed={}", self.seed);
        for r in &self.rows {
            let k = r.row.key();
            let _ = writeln!(out, "{k}.iou={:.6}", r.iou);
            let _ = writeln!(out, "{k}.iou_se={:.6}", r.iou_se);
            let _ = writeln!(out, "{k}.dice={:.6}", r.dice);
            let _ = writeln!(out, "{k}.dice_se={:.6}", r.dice_se);
            let _ = writeln!(out, "{k}.n={}", r.count);
        }
        for s in &self.per_sample {
            for (row, i, d) in &s.scores {
                let _ = writeln!(out, "sample.{}.{}.iou={i:.6}", s.id, row.key());
                let _ = writeln!(out, "sample.{}.{}.dice={d:.6}", s.id, row.key());
            }
        }
        out
    }

    /// Writes `metrics.txt` and `metrics.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
        for (name, text) in [("metrics.txt", self.to_table()), ("metrics.kv", self.to_kv())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| ScanError::io(&p, e))?;
        }
        Ok(())
    }
}
