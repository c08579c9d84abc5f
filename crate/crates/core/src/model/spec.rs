//! Layer schedules for the segmentor and the critic.
//!
//! Both networks share one down path: a 7x7 stem, a residual block at full
//! resolution, three pool + pre-activated 3x3 transitions, five residual
//! blocks at 1/16 resolution and a 1x1 projection to 64 maps. The segmentor
//! climbs back with four stride-2 transposed convolutions and ends in a
//! 1x1 / 3x3 / 1x1 interleave; the critic pools globally and reads out one
//! logit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Norm,
    Relu,
    ResBlock,
    AvgPool,
    TransposedConv,
    GlobalPool,
    Dense,
    Softmax,
    Sigmoid,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Norm => "norm",
            LayerKind::Relu => "relu",
            LayerKind::ResBlock => "resblock",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::TransposedConv => "transposed_conv",
            LayerKind::GlobalPool => "global_pool",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
            LayerKind::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Square kernel extent (0 for parameter-free layers).
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Downsampling exponent of the layer's output: resolution = base >> stage.
    pub stage: u32,
}

impl LayerSpec {
    const fn new(kind: LayerKind, kernel: usize, cin: usize, cout: usize, stage: u32) -> Self {
        Self { kind, kernel, in_channels: cin, out_channels: cout, stage }
    }

    /// Convolutions this entry contributes (transposed convolutions excluded).
    pub fn conv_layers(&self) -> usize {
        match self.kind {
            LayerKind::Conv => 1,
            LayerKind::ResBlock => 2 + usize::from(self.in_channels != self.out_channels),
            _ => 0,
        }
    }

    /// Learnable scalars of this entry.
    pub fn param_count(&self) -> usize {
        let (k, i, o) = (self.kernel, self.in_channels, self.out_channels);
        match self.kind {
            LayerKind::Conv | LayerKind::TransposedConv => k * k * i * o + o,
            LayerKind::Norm => 2 * i,
            LayerKind::ResBlock => {
                let proj = if i != o { i * o + o } else { 0 };
                2 * i + (k * k * i * o + o) + 2 * o + (k * k * o * o + o) + proj
            }
            LayerKind::Dense => i * o + o,
            _ => 0,
        }
    }
}

/// Channel widths of the shared schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub stem: usize,
    /// Output maps after each of the three pool + conv transitions.
    pub transitions: [usize; 3],
    pub deep_blocks: usize,
    pub bottleneck: usize,
    pub up: [usize; 4],
    pub classes: usize,
}

pub const WIDTHS: Widths = Widths {
    stem: 8,
    transitions: [16, 32, 51],
    deep_blocks: 5,
    bottleneck: 64,
    up: [32, 16, 8, 8],
    classes: 4,
};

/// Total downsampling exponent of the down path (400 -> 25).
pub const DEPTH: u32 = 4;

/// Down path shared by segmentor and critic, ending in the 64-map box.
pub fn down_path(input_channels: usize, w: &Widths) -> Vec<LayerSpec> {
    use LayerKind::*;
    let mut s = vec![
        LayerSpec::new(Conv, 7, input_channels, w.stem, 0),
        LayerSpec::new(ResBlock, 3, w.stem, w.stem, 0),
    ];
    let mut c = w.stem;
    for (i, &next) in w.transitions.iter().enumerate() {
        let stage = i as u32 + 1;
        s.push(LayerSpec::new(AvgPool, 2, c, c, stage));
        s.push(LayerSpec::new(Norm, 0, c, c, stage));
        s.push(LayerSpec::new(Relu, 0, c, c, stage));
        s.push(LayerSpec::new(Conv, 3, c, next, stage));
        c = next;
    }
    s.push(LayerSpec::new(AvgPool, 2, c, c, DEPTH));
    for _ in 0..w.deep_blocks {
        s.push(LayerSpec::new(ResBlock, 3, c, c, DEPTH));
    }
    s.push(LayerSpec::new(Norm, 0, c, c, DEPTH));
    s.push(LayerSpec::new(Relu, 0, c, c, DEPTH));
    s.push(LayerSpec::new(Conv, 1, c, w.bottleneck, DEPTH));
    s.push(LayerSpec::new(Relu, 0, w.bottleneck, w.bottleneck, DEPTH));
    s
}

pub fn segmentor_schedule(w: &Widths) -> Vec<LayerSpec> {
    use LayerKind::*;
    let mut s = down_path(1, w);
    let mut c = w.bottleneck;
    for (i, &next) in w.up.iter().enumerate() {
        let stage = DEPTH - 1 - i as u32;
        s.push(LayerSpec::new(TransposedConv, 2, c, next, stage));
        s.push(LayerSpec::new(Relu, 0, next, next, stage));
        c = next;
    }
    s.push(LayerSpec::new(Conv, 1, c, c, 0));
    s.push(LayerSpec::new(Relu, 0, c, c, 0));
    s.push(LayerSpec::new(Conv, 3, c, c, 0));
    s.push(LayerSpec::new(Relu, 0, c, c, 0));
    s.push(LayerSpec::new(Conv, 1, c, w.classes, 0));
    s.push(LayerSpec::new(Softmax, 0, w.classes, w.classes, 0));
    s
}

pub fn critic_schedule(input_channels: usize, w: &Widths) -> Vec<LayerSpec> {
    use LayerKind::*;
    let mut s = down_path(input_channels, w);
    s.push(LayerSpec::new(GlobalPool, 0, w.bottleneck, w.bottleneck, DEPTH));
    s.push(LayerSpec::new(Dense, 0, w.bottleneck, 1, DEPTH));
    s.push(LayerSpec::new(Sigmoid, 0, 1, 1, DEPTH));
    s
}

pub fn count_params(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}

pub fn count_conv_layers(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::conv_layers).sum()
}

/// Checks channel continuity and the halving/doubling resolution ladder.
pub fn validate_schedule(specs: &[LayerSpec]) -> Result<(), String> {
    for pair in specs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.out_channels != b.in_channels {
            return Err(format!("{:?} feeds {} channels into {:?}", a.kind, a.out_channels, b));
        }
        let step = b.stage as i64 - a.stage as i64;
        let ok = match b.kind {
            LayerKind::AvgPool => step == 1,
            LayerKind::TransposedConv => step == -1,
            _ => step == 0,
        };
        if !ok {
            return Err(format!("stage jump {} -> {} at {:?}", a.stage, b.stage, b.kind));
        }
    }
    Ok(())
}

/// Hex digest identifying a schedule; stored in checkpoints.
pub fn fingerprint(specs: &[LayerSpec]) -> String {
    let mut text = String::new();
    for s in specs {
        let _ = writeln!(text, "{}:{}:{}:{}:{}", s.kind.name(), s.kernel, s.in_channels, s.out_channels, s.stage);
    }
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Markdown table of a schedule at a given input resolution.
pub fn schedule_table(specs: &[LayerSpec], base_resolution: usize) -> String {
    let mut out = String::from("| # | layer | kernel | in | out | resolution | params |\n|---|---|---|---|---|---|---|\n");
    for (i, s) in specs.iter().enumerate() {
        let res = base_resolution >> s.stage;
        let kernel = if s.kernel > 0 { format!("{0}x{0}", s.kernel) } else { "-".into() };
        let _ = writeln!(
            out,
            "| {i} | {} | {kernel} | {} | {} | {res}x{res} | {} |",
            s.kind.name(),
            s.in_channels,
            s.out_channels,
            s.param_count()
        );
    }
    let _ = writeln!(out, "\nTotal parameters: {}; convolution layers: {}", count_params(specs), count_conv_layers(specs));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_counts() {
        assert_eq!(LayerSpec::new(LayerKind::Conv, 3, 8, 16, 0).param_count(), 1168);
        assert_eq!(LayerSpec::new(LayerKind::Conv, 1, 64, 4, 0).param_count(), 260);
        assert_eq!(count_params(&[]), 0);
    }

    #[test]
    fn schedules_are_consistent() {
        validate_schedule(&segmentor_schedule(&WIDTHS)).unwrap();
        validate_schedule(&critic_schedule(4, &WIDTHS)).unwrap();
        validate_schedule(&critic_schedule(5, &WIDTHS)).unwrap();
    }

    #[test]
    fn twenty_convolutions() {
        assert_eq!(count_conv_layers(&segmentor_schedule(&WIDTHS)), 20);
    }

    #[test]
    fn budgets() {
        let s = count_params(&segmentor_schedule(&WIDTHS));
        let d = count_params(&critic_schedule(4, &WIDTHS));
        assert_eq!(s, 273_073);
        assert_eq!(d, 262_550);
    }

    #[test]
    fn resolution_ladder() {
        let specs = segmentor_schedule(&WIDTHS);
        let mut seen: Vec<usize> = specs.iter().map(|s| 400 >> s.stage).collect();
        seen.dedup();
        assert_eq!(seen, vec![400, 200, 100, 50, 25, 50, 100, 200, 400]);
    }

    #[test]
    fn fingerprints_differ() {
        assert_ne!(fingerprint(&critic_schedule(4, &WIDTHS)), fingerprint(&critic_schedule(5, &WIDTHS)));
        assert_eq!(fingerprint(&segmentor_schedule(&WIDTHS)).len(), 16);
    }
}
