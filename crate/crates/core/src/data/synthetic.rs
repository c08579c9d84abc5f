//! Synthetic chest-like scenes: two ellipses for the lungs and a rectangle
//! for the heart on a noisy background. Used for smoke and mechanics tests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image_io::save_gray_png;
use super::manifest::{DatasetManifest, ImageFormat, Source};
use super::normalize::normalize_per_image;
use super::resize::Alignment;
use super::resize::one_hot_priority;
use super::sample::ImageSample;
use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub size: usize,
    /// Standard deviation of the additive pixel noise (scene contrast is 1).
    pub noise: f64,
    /// Relative jitter of shape centers and radii.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { size: 64, noise: 0.35, jitter: 0.12 }
    }
}

/// `count` scenes; sample `i` depends only on `(seed, i)`.
pub fn geometric_samples(count: usize, seed: u64, config: SyntheticConfig) -> Vec<ImageSample> {
    (0..count).map(|i| geometric_sample(seed, i, config)).collect()
}

pub fn geometric_sample(seed: u64, index: usize, config: SyntheticConfig) -> ImageSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let s = config.size as f64;
    let mut j = |scale: f64| 1.0 + config.jitter * scale * rng.random_range(-1.0..1.0);
    // (cy, cx, ry, rx); the patient's left lung is on the image right
    let left = (0.5 * s * j(0.5), 0.69 * s * j(0.3), 0.3 * s * j(1.0), 0.15 * s * j(1.0));
    let right = (0.5 * s * j(0.5), 0.31 * s * j(0.5), 0.3 * s * j(1.0), 0.15 * s * j(1.0));
    let heart = (0.66 * s * j(0.3), 0.56 * s * j(0.3), 0.1 * s * j(1.0), 0.12 * s * j(1.0));
    let tilt = rng.random_range(-0.3..0.3);

    let inside_ellipse = |(cy, cx, ry, rx): (f64, f64, f64, f64), y: f64, x: f64| {
        ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0
    };
    let inside_rect = |(cy, cx, hy, hx): (f64, f64, f64, f64), y: f64, x: f64| {
        (y - cy).abs() <= hy && (x - cx).abs() <= hx
    };

    let n = config.size;
    let mut organs = Tensor::zeros(&[n, n, 3]);
    let mut image = Tensor::zeros(&[n, n, 1]);
    let noise = Normal::new(0.0, config.noise).expect("finite noise");
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let flags = [inside_ellipse(left, fy, fx), inside_ellipse(right, fy, fx), inside_rect(heart, fy, fx)];
            for (k, &f) in flags.iter().enumerate() {
                organs.set3(y, x, k, if f { 1.0 } else { 0.0 });
            }
            let base = if flags[0] || flags[1] {
                0.0
            } else if flags[2] {
                0.6
            } else {
                1.0
            };
            let shade = tilt * (fx / s - 0.5);
            image.set3(y, x, 0, (base + shade + noise.sample(&mut rng)) as f32);
        }
    }
    let (mask, _) = one_hot_priority(&organs).expect("three foreground channels");
    ImageSample { id: format!("synthetic_{index:04}"), image: normalize_per_image(&image), mask, heart_annotated: true }
}

/// Writes `count` scenes as an on-disk source (8-bit PNG image plus one
/// PNG per organ) under `root` and saves a `manifest.toml` next to them.
/// With `heart = false` the source has no heart directory, like a
/// lungs-only dataset.
pub fn write_dataset(
    root: &Path,
    name: &str,
    count: usize,
    seed: u64,
    config: SyntheticConfig,
    heart: bool,
) -> Result<DatasetManifest> {
    let dirs = ["images", "left_lung", "right_lung", "heart"].map(|d| root.join(name).join(d));
    for d in dirs.iter().take(if heart { 4 } else { 3 }) {
        std::fs::create_dir_all(d).map_err(|e| ScanError::io(d, e))?;
    }
    for i in 0..count {
        let s = geometric_sample(seed, i, config);
        let id = format!("{name}_{i:04}");
        save_gray_png(&s.image.map(|v| 128.0 + 40.0 * v), &dirs[0].join(format!("{id}.png")))?;
        let organs = if heart { 3 } else { 2 };
        for (k, dir) in dirs[1..=organs].iter().enumerate() {
            let m = s.mask.slice_channels(k, 1)?.map(|v| v * 255.0);
            save_gray_png(&m, &dir.join(format!("{id}.png")))?;
        }
    }
    let rel = |d: &str| PathBuf::from(name).join(d);
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        resolution: config.size,
        alignment: Alignment::default(),
        cache_dir: None,
        sources: vec![Source {
            name: name.into(),
            format: ImageFormat::Gray,
            images: rel("images"),
            left_lung: rel("left_lung"),
            right_lung: rel("right_lung"),
            heart: heart.then(|| rel("heart")),
            image_extensions: None,
            mask_extensions: vec!["png".into()],
        }],
    };
    let path = root.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| ScanError::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| ScanError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assemble_samples, DatasetChoice, LoadOptions};

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticConfig { size: 32, ..Default::default() };
        let m = write_dataset(dir.path(), "toy", 3, 9, c, true).unwrap();
        let reread = DatasetManifest::load(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(reread, m);
        let ids: Vec<String> = (0..3).map(|i| format!("toy_{i:04}")).collect();
        let sources = m.select(DatasetChoice::Combined).unwrap();
        let (samples, report) = assemble_samples(&m, &sources, &ids, LoadOptions::default()).unwrap();
        assert_eq!(report.loaded.len(), 3);
        for (s, i) in samples.iter().zip(0..) {
            assert_eq!(s.mask, geometric_sample(9, i, c).mask);
        }
    }

    #[test]
    fn lungs_only_dataset_has_no_heart() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticConfig { size: 32, ..Default::default() };
        let m = write_dataset(dir.path(), "mc", 1, 9, c, false).unwrap();
        let sources = m.select(DatasetChoice::Combined).unwrap();
        let (samples, _) = assemble_samples(&m, &sources, &["mc_0000".into()], LoadOptions::default()).unwrap();
        assert!(!samples[0].heart_annotated);
        assert!(samples[0].mask.data().iter().skip(2).step_by(4).all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_valid() {
        let c = SyntheticConfig::default();
        let a = geometric_samples(3, 5, c);
        assert_eq!(a, geometric_samples(3, 5, c));
        assert_ne!(a[0].image, a[1].image);
        for s in &a {
            s.validate().unwrap();
            for k in 0..4 {
                let count = s.mask.data().iter().skip(k).step_by(4).filter(|&&v| v == 1.0).count();
                assert!(count > 50, "class {k} has {count} pixels");
            }
        }
    }
}
